"""File formats: 8-bit PNG rasters and the little-endian float tensor layout.

Tensor files (score maps and exported training patches) are laid out as::

    magic     4 bytes   b"PDSM" (score map) or b"PDPT" (training patch)
    width     uint32 LE
    height    uint32 LE
    channels  uint32 LE  (classes for a score map)
    data      float32 LE, width*height*channels values, row-major, channel-minor
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

SCORE_MAGIC = b"PDSM"
PATCH_MAGIC = b"PDPT"
_HEADER = struct.Struct("<4sIII")


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    """Read any Pillow-readable image as float RGB in ``[0, 1]``."""
    with Image.open(path) as im:
        im.load()
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_rgb(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)[:, :, :3]).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "P", "I", "I;16"):
            raise FormatError(f"{path}: mask PNG must be single-channel, got mode {im.mode}")
        arr = np.asarray(im)
    if arr.max(initial=0) > 255:
        raise FormatError(f"{path}: label values exceed 8 bits")
    return arr.astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(mask, dtype=np.uint8)).save(path, format="PNG")


def write_tensor(path, data: np.ndarray, magic: bytes = SCORE_MAGIC) -> None:
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, w, h, c))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_header(path) -> tuple[bytes, int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    return _HEADER.unpack(head)


def read_tensor(path, magic: bytes | None = SCORE_MAGIC) -> np.ndarray:
    """Read a tensor file into a float64 ``(H, W, C)`` array."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got, w, h, c = _HEADER.unpack_from(raw)
    if magic is not None and got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if got not in (SCORE_MAGIC, PATCH_MAGIC):
        raise FormatError(f"{path}: unknown magic {got!r}")
    expected = w * h * c * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)
