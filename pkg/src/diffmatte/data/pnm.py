"""Binary PPM (P6) and PGM (P5) reading and writing, 8- and 16-bit.

Values are floats in [0, 1], scaled linearly by maxval. 16-bit samples are
big-endian as the format requires.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PnmError(ValueError):
    pass


class PnmHeaderError(PnmError):
    pass


class PnmTruncatedError(PnmError):
    pass


def _quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * maxval + 0.5).astype(np.uint16 if maxval > 255 else np.uint8)


def _encode(magic: bytes, pixels: np.ndarray, width: int, height: int, maxval: int) -> bytes:
    if maxval not in (255, 65535):
        raise PnmHeaderError(f"only maxval 255 or 65535 can be written, got {maxval}")
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, maxval)
    q = _quantize(pixels, maxval)
    return header + (q.astype(">u2").tobytes() if maxval > 255 else q.tobytes())


def write_ppm(path, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PnmError(f"PPM needs an H x W x 3 image, got {image.shape}")
    Path(path).write_bytes(_encode(b"P6", image, image.shape[1], image.shape[0], maxval))


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise PnmError(f"PGM needs an H x W image, got {image.shape}")
    Path(path).write_bytes(_encode(b"P5", image, image.shape[1], image.shape[0], maxval))


def _parse_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, raster offset)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmHeaderError(f"unsupported magic {magic!r}")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise PnmHeaderError("header ended early")
        ch = data[pos : pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            token = data[start:pos]
            if not token.isdigit():
                raise PnmHeaderError(f"non-numeric header field {token!r}")
            tokens.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PnmHeaderError("missing whitespace after maxval")
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise PnmHeaderError(f"invalid dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise PnmHeaderError(f"maxval {maxval} outside 1..65535")
    return magic, width, height, maxval, pos + 1


def decode(data: bytes) -> np.ndarray:
    magic, width, height, maxval, offset = _parse_header(data)
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    itemsize = 2 if maxval > 255 else 1
    raster = data[offset : offset + count * itemsize]
    if len(raster) < count * itemsize:
        raise PnmTruncatedError(f"raster has {len(raster)} bytes, expected {count * itemsize}")
    samples = np.frombuffer(raster, dtype=">u2" if itemsize == 2 else np.uint8)
    if samples.max(initial=0) > maxval:
        raise PnmError(f"sample value exceeds maxval {maxval}")
    out = samples.astype(np.float64) / maxval
    shape = (height, width, 3) if channels == 3 else (height, width)
    return out.reshape(shape)


def read_ppm(path) -> np.ndarray:
    img = decode(Path(path).read_bytes())
    if img.ndim != 3:
        raise PnmHeaderError(f"{path} is not a PPM (P6) file")
    return img


def read_pgm(path) -> np.ndarray:
    img = decode(Path(path).read_bytes())
    if img.ndim != 2:
        raise PnmHeaderError(f"{path} is not a PGM (P5) file")
    return img


def write_trimap(path, trimap: np.ndarray) -> None:
    """8-bit PGM with 0 / 128 / 255 for background / unknown / foreground."""
    codes = np.full(trimap.shape, 128, dtype=np.uint8)
    codes[trimap == 0.0] = 0
    codes[trimap == 1.0] = 255
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (trimap.shape[1], trimap.shape[0]) + codes.tobytes())


def read_trimap(path) -> np.ndarray:
    raw = read_pgm(path)
    out = np.full(raw.shape, 0.5)
    out[raw < 1.0 / 3.0] = 0.0
    out[raw > 2.0 / 3.0] = 1.0
    return out
