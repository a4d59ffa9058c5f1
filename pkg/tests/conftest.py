import numpy as np
import pytest

from printdefect import imgio
from printdefect.sources import photo_like


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def src_dir(tmp_path):
    """Two small procedural source pages on disk."""
    d = tmp_path / "sources"
    d.mkdir()
    for i in range(2):
        imgio.write_rgb(d / f"page{i}.png", photo_like(200, 160, seed=50 + i))
    return d
