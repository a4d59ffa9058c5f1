import struct

import numpy as np
import pytest

from printdefect import imgio
from printdefect.errors import FormatError


def test_rgb_roundtrip_quantized(tmp_path, rng):
    img = rng.uniform(size=(9, 13, 3))
    imgio.write_rgb(tmp_path / "a.png", img)
    back = imgio.read_rgb(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_mask_roundtrip(tmp_path, rng):
    m = rng.integers(0, 6, size=(11, 7)).astype(np.uint8)
    imgio.write_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(imgio.read_mask(tmp_path / "m.png"), m)


def test_mask_must_be_single_channel(tmp_path):
    imgio.write_rgb(tmp_path / "rgb.png", np.zeros((3, 3, 3)))
    with pytest.raises(FormatError):
        imgio.read_mask(tmp_path / "rgb.png")


def test_tensor_layout(tmp_path):
    data = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4) / 7
    path = tmp_path / "s.pdsm"
    imgio.write_tensor(path, data)
    raw = path.read_bytes()
    assert raw[:4] == b"PDSM"
    assert struct.unpack("<III", raw[4:16]) == (3, 2, 4)
    # Row-major, channel-minor: the second value is pixel (0, 0), class 1.
    assert struct.unpack("<f", raw[20:24])[0] == np.float32(data[0, 0, 1])
    np.testing.assert_array_equal(imgio.read_tensor(path), data.astype(np.float32))
    assert imgio.read_tensor_header(path) == (b"PDSM", 3, 2, 4)


def test_tensor_errors(tmp_path):
    p = tmp_path / "t.bin"
    imgio.write_tensor(p, np.zeros((2, 2, 3)), imgio.PATCH_MAGIC)
    with pytest.raises(FormatError):
        imgio.read_tensor(p, imgio.SCORE_MAGIC)
    assert imgio.read_tensor(p, None).shape == (2, 2, 3)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        imgio.read_tensor(p, None)
    p.write_bytes(b"PD")
    with pytest.raises(FormatError):
        imgio.read_tensor(p)
