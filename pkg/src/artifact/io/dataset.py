"""IMGB image dataset files.

Header (15 bytes, little-endian)::

    magic b"IMGB" | version u16 | count u32 | channels u8 | height u16 | width u16

followed by ``count`` records of one label byte and ``channels*height*width``
pixel bytes (planar, channel-major, row-major within a channel).
"""
from __future__ import annotations

import mmap
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"IMGB"
VERSION = 1
_HEADER = struct.Struct("<4sHIBHH")
HEADER_SIZE = _HEADER.size


class DatasetError(ValueError):
    pass


class BadMagic(DatasetError):
    pass


class VersionMismatch(DatasetError):
    pass


class Truncated(DatasetError):
    pass


class ImageDataset:
    """Random-access view of an IMGB file (or an in-memory equivalent)."""

    def __init__(self, pixels: np.ndarray, labels: np.ndarray, version: int = VERSION):
        # pixels: (count, C, H, W) uint8, possibly a memory map
        self._pixels = pixels
        self._labels = labels
        self.version = version

    @property
    def count(self) -> int:
        return len(self._labels)

    @property
    def channels(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[2]

    @property
    def width(self) -> int:
        return self._pixels.shape[3]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int):
        return self._pixels[i].astype(np.float32) / 255.0, int(self._labels[i])

    @property
    def labels(self) -> np.ndarray:
        return np.asarray(self._labels, dtype=np.int64)

    @property
    def raw(self) -> np.ndarray:
        return np.asarray(self._pixels)

    def images(self, indices: Sequence[int] | slice | None = None) -> np.ndarray:
        """Float32 images in [0, 1], shape (n, C, H, W)."""
        sel = self._pixels if indices is None else self._pixels[indices]
        return np.asarray(sel, dtype=np.float32) / 255.0

    def subset(self, indices) -> "ImageDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ImageDataset(np.asarray(self._pixels[idx]), np.asarray(self._labels[idx]), self.version)


def to_bytes(pixels: np.ndarray, labels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels)
    if pixels.ndim != 4:
        raise DatasetError(f"pixels must be (count, C, H, W), got {pixels.shape}")
    n, c, h, w = pixels.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() > 255)):
        raise DatasetError("need one label in [0, 255] per image")
    rec = np.empty((n, 1 + c * h * w), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = pixels.reshape(n, c * h * w)
    return _HEADER.pack(MAGIC, VERSION, n, c, h, w) + rec.tobytes()


def write_dataset(path, pixels: np.ndarray, labels: np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(pixels, labels))


def from_float(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def parse(buf, version: int = VERSION) -> ImageDataset:
    if len(buf) < HEADER_SIZE:
        raise Truncated(f"file is {len(buf)} bytes; header needs {HEADER_SIZE} (truncated at byte offset {len(buf)})")
    magic, ver, n, c, h, w = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
    if ver != version:
        raise VersionMismatch(f"unsupported version {ver} at byte offset 4 (expected {version})")
    rec_size = 1 + c * h * w
    expected = HEADER_SIZE + n * rec_size
    if len(buf) < expected:
        full = (len(buf) - HEADER_SIZE) // rec_size
        off = HEADER_SIZE + full * rec_size
        raise Truncated(f"record {full} of {n} is incomplete at byte offset {off}; file has {len(buf)} of {expected} bytes")
    if len(buf) > expected:
        raise DatasetError(f"{len(buf) - expected} unexpected trailing bytes at byte offset {expected}")
    if n == 0:
        return ImageDataset(np.zeros((0, c, h, w), np.uint8), np.zeros(0, np.uint8), ver)
    # view only the declared records
    records = np.frombuffer(buf, dtype=np.uint8, count=n * rec_size, offset=HEADER_SIZE).reshape(n, rec_size)
    labels = records[:, 0]
    pixels = records[:, 1:].reshape(n, c, h, w)
    return ImageDataset(pixels, labels, ver)


def load_dataset(path) -> ImageDataset:
    path = Path(path)
    size = path.stat().st_size
    if size == 0:
        return parse(b"")
    with open(path, "rb") as fh:
        mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
    return parse(mm)
