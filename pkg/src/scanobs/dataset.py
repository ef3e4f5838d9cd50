"""Binary dataset files and CSV export.

File layout: a fixed 64-byte header followed by per-record data.

    header: magic "SCANOBS1" (8 bytes), version u32, image count u64,
            width u32, height u32, J u32, zero padding to 64 bytes
    record: label u8, then width*height little-endian float32 pixels
            (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SCANOBS1"
VERSION = 1
_HEADER = struct.Struct("<8sIQIII")
HEADER_SIZE = 64


class DatasetWriter:
    """Streaming writer; records may be appended one batch at a time."""

    def __init__(self, path, width: int, height: int, n_locations: int):
        self.path = Path(path)
        self.width = width
        self.height = height
        self.n_locations = n_locations
        self.count = 0
        self._fh = open(self.path, "wb")
        self._write_header()

    def _write_header(self):
        hdr = _HEADER.pack(MAGIC, VERSION, self.count,
                           self.width, self.height, self.n_locations)
        self._fh.seek(0)
        self._fh.write(hdr.ljust(HEADER_SIZE, b"\0"))
        self._fh.seek(0, 2)

    def append(self, image: np.ndarray, label: int):
        if image.shape != (self.height, self.width):
            raise ValueError(f"image shape {image.shape} does not match "
                             f"({self.height}, {self.width})")
        self._fh.write(struct.pack("<B", label))
        self._fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())
        self.count += 1

    def close(self):
        self._write_header()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_dataset(path, images: np.ndarray, labels):
    """Write a stack of images (N, H, W) with integer labels."""
    n, h, w = images.shape
    labels = np.asarray(labels)
    with DatasetWriter(path, w, h, int(labels.max(initial=0))) as out:
        for img, lab in zip(images, labels):
            out.append(img, int(lab))


def read_dataset(path):
    """Read a dataset file; returns (images (N,H,W) float32, labels (N,) uint8, meta)."""
    raw = Path(path).read_bytes()
    magic, version, count, width, height, n_loc = _HEADER.unpack(
        raw[:_HEADER.size])
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    rec = 1 + 4 * width * height
    body = np.frombuffer(raw, dtype=np.uint8, offset=HEADER_SIZE)
    if len(body) != count * rec:
        raise ValueError(f"{path}: truncated file")
    body = body.reshape(count, rec)
    labels = body[:, 0].copy()
    images = body[:, 1:].copy().view("<f4").reshape(count, height, width)
    meta = {"count": count, "width": width, "height": height,
            "n_locations": n_loc}
    return images.astype(np.float32), labels, meta


def image_to_csv(path, image: np.ndarray):
    """Export a single image as CSV, one row per image row."""
    np.savetxt(path, np.asarray(image), delimiter=",", fmt="%.8g")
