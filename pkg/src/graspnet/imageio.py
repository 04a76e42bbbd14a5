"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""
from __future__ import annotations

import numpy as np

from .errors import CorruptFileError
from .model import atomic_write_bytes


def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(image: np.ndarray) -> bytes:
    """(H, W, 3) float image in [0, 1] -> P6 bytes."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) image, got {image.shape}")
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + _to_u8(image).tobytes()


def encode_pgm(image: np.ndarray) -> bytes:
    """(H, W) float image in [0, 1] -> P5 bytes."""
    if image.ndim != 2:
        raise ValueError(f"PGM needs an (H, W) image, got {image.shape}")
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + _to_u8(image).tobytes()


def _read_header(data: bytes, magic: bytes):
    if data[:2] != magic:
        raise CorruptFileError(f"expected {magic.decode()} file, got {data[:2]!r}")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptFileError("malformed header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates header and raster
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise CorruptFileError(f"only 8-bit images supported, maxval={maxval}")
    return w, h, pos


def decode_ppm(data: bytes) -> np.ndarray:
    w, h, pos = _read_header(data, b"P6")
    raster = np.frombuffer(data, dtype=np.uint8, offset=pos)
    if raster.size != w * h * 3:
        raise CorruptFileError(f"raster has {raster.size} bytes, expected {w * h * 3}")
    return raster.reshape(h, w, 3).astype(np.float32) / 255.0


def decode_pgm(data: bytes) -> np.ndarray:
    w, h, pos = _read_header(data, b"P5")
    raster = np.frombuffer(data, dtype=np.uint8, offset=pos)
    if raster.size != w * h:
        raise CorruptFileError(f"raster has {raster.size} bytes, expected {w * h}")
    return raster.reshape(h, w).astype(np.float32) / 255.0


def write_ppm(path, image):
    atomic_write_bytes(path, encode_ppm(image))


def write_pgm(path, image):
    atomic_write_bytes(path, encode_pgm(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())
