"""Binary file formats: GRNV volumes, PPM (P6) images and PFM depth maps."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

GRNV_MAGIC = b"GRNV"
GRNV_VERSION = 1
_GRNV_HEADER = struct.Struct("<4s5I")


def encode_grnv(data):
    """Serialize a (w, h, d, c) array as a GRNV byte string (float32, C order)."""
    data = np.asarray(data)
    if data.ndim != 4:
        raise ValueError(f"GRNV payload must be 4-D, got shape {data.shape}")
    header = _GRNV_HEADER.pack(GRNV_MAGIC, GRNV_VERSION, *data.shape)
    return header + np.ascontiguousarray(data, dtype="<f4").tobytes()


def decode_grnv(buf):
    """Parse GRNV bytes into a float64 array of shape (w, h, d, c)."""
    if len(buf) < 4 or buf[:4] != GRNV_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {GRNV_MAGIC!r}", offset=0)
    if len(buf) < _GRNV_HEADER.size:
        raise FormatError("truncated GRNV header", offset=len(buf))
    _, version, w, h, d, c = _GRNV_HEADER.unpack_from(buf)
    if version != GRNV_VERSION:
        raise FormatError(f"unsupported GRNV version {version}", offset=4)
    n = w * h * d * c
    expected = _GRNV_HEADER.size + 4 * n
    if len(buf) != expected:
        raise FormatError(
            f"GRNV payload size mismatch: header says {n} floats, file has {len(buf)} bytes "
            f"(expected {expected})",
            offset=min(len(buf), expected),
        )
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=_GRNV_HEADER.size)
    return arr.astype(np.float64).reshape(w, h, d, c)


def write_grnv(path, data):
    Path(path).write_bytes(encode_grnv(data))


def read_grnv(path):
    return decode_grnv(Path(path).read_bytes())


def _read_header_tokens(buf, count):
    # whitespace separated tokens, '#' comments allowed; returns (tokens, offset after last)
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("truncated header", offset=i)
        tokens.append((buf[start:i], start))
    return tokens, i + 1


def write_ppm(path, image):
    """Write an (H, W, 3) float image in [0, 1] as binary 8-bit PPM."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_ppm(path):
    """Read a binary P6 PPM into an (H, W, 3) float array in [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise FormatError(f"bad PPM magic {buf[:2]!r}, expected b'P6'", offset=0)
    tokens, offset = _read_header_tokens(buf, 4)
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError:
        bad = next(pos for t, pos in tokens[1:] if not t.isdigit())
        raise FormatError("non-numeric PPM header field", offset=bad) from None
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM is supported (maxval {maxval})", offset=tokens[3][1])
    if len(buf) - offset != w * h * 3:
        raise FormatError(f"PPM payload has {len(buf) - offset} bytes, expected {w * h * 3}", offset=offset)
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=offset).reshape(h, w, 3)
    return pixels.astype(np.float64) / 255.0


def write_pfm(path, depth):
    """Write an (H, W) float map as little-endian grayscale PFM (rows bottom-up)."""
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError(f"PFM needs an (H, W) map, got {depth.shape}")
    h, w = depth.shape
    header = b"Pf\n%d %d\n-1.0\n" % (w, h)
    Path(path).write_bytes(header + np.ascontiguousarray(depth[::-1]).tobytes())


def read_pfm(path):
    buf = Path(path).read_bytes()
    if buf[:2] != b"Pf":
        raise FormatError(f"bad PFM magic {buf[:2]!r}, expected b'Pf'", offset=0)
    tokens, offset = _read_header_tokens(buf, 4)
    try:
        w, h = int(tokens[1][0]), int(tokens[2][0])
        scale = float(tokens[3][0])
    except ValueError:
        raise FormatError("malformed PFM header", offset=tokens[1][1]) from None
    dtype = "<f4" if scale < 0 else ">f4"
    if len(buf) - offset != w * h * 4:
        raise FormatError(f"PFM payload has {len(buf) - offset} bytes, expected {w * h * 4}", offset=offset)
    data = np.frombuffer(buf, dtype=dtype, offset=offset).reshape(h, w)
    return data[::-1].astype(np.float64)
