"""Binary netpbm reading and writing (P6 images, P5 label maps and heatmaps).

The dataset-on-disk format is a directory of `<id>.ppm` / `<id>_mask.pgm`
pairs, which keeps ingestion free of compressed-codec dependencies. Only
8-bit rasters are supported.
"""

from __future__ import annotations

import numpy as np

from .ops import InvalidInputError


def _read_header(data: bytes, magic: bytes):
    """Parse magic, width, height, maxval; returns them plus the raster offset."""
    if not data.startswith(magic):
        raise InvalidInputError(f"expected {magic.decode()} file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError("truncated netpbm header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte separates header from raster
    width, height, maxval = fields
    if maxval != 255:
        raise InvalidInputError(f"only 8-bit rasters supported, maxval={maxval}")
    return width, height, data[pos:]


def read_ppm(path) -> np.ndarray:
    """Load a binary P6 image as float (3, H, W) in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, raster = _read_header(data, b"P6")
    expected = width * height * 3
    if len(raster) < expected:
        raise InvalidInputError(f"P6 raster too short in {path}")
    pixels = np.frombuffer(raster[:expected], dtype=np.uint8)
    pixels = pixels.reshape(height, width, 3).transpose(2, 0, 1)
    return pixels.astype(np.float64) / 255.0


def write_ppm(path, image) -> None:
    """Write a float (3, H, W) image in [0, 1] as binary P6."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidInputError(f"expected (3, H, W) image, got {image.shape}")
    raster = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    raster = raster.transpose(1, 2, 0)
    header = f"P6\n{image.shape[2]} {image.shape[1]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + raster.tobytes())


def read_pgm(path) -> np.ndarray:
    """Load a binary P5 map as uint8 (H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, raster = _read_header(data, b"P5")
    expected = width * height
    if len(raster) < expected:
        raise InvalidInputError(f"P5 raster too short in {path}")
    return np.frombuffer(raster[:expected], dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, values) -> None:
    """Write a uint8 (H, W) map as binary P5."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise InvalidInputError(f"expected (H, W) map, got {values.shape}")
    values = values.astype(np.uint8)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + values.tobytes())


def write_heatmap_pgm(path, heatmap) -> None:
    """Export a [0, 1] heatmap as 8-bit P5, value = round(255 * A)."""
    heatmap = np.asarray(heatmap, dtype=np.float64)
    write_pgm(path, np.rint(np.clip(heatmap, 0.0, 1.0) * 255.0).astype(np.uint8))
