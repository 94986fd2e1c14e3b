"""Binary PPM (P6) images and raw dumps of depth and triangle-ID maps.

Raw map layout (all little-endian)::

    offset 0   8 bytes  magic b"EIGRAW01"
    offset 8   u8       kind: 0 = float64 depth, 1 = int32 triangle ids
    offset 9   u8       reserved (0)
    offset 10  u16      reserved (0)
    offset 12  u32      height
    offset 16  u32      width
    offset 20  height * width values, row-major

Depth background is +inf, ID background is -1.
"""
from __future__ import annotations

import re
import struct

import numpy as np

from .errors import ImageFormatError, ParameterError
from .meshio import atomic_write_bytes

RAW_MAGIC = b"EIGRAW01"
_RAW_HEADER = struct.Struct("<8sBBHII")
_RAW_KINDS = {0: "<f8", 1: "<i4"}


def to_uint8(image) -> np.ndarray:
    """Float images in [0, 1] are clamped and rounded; uint8 passes through."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return img
    return np.round(np.clip(img.astype(float), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image) -> bytes:
    img = to_uint8(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ParameterError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def write_ppm(path, image):
    atomic_write_bytes(path, encode_ppm(image))


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def decode_ppm(data: bytes) -> np.ndarray:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise ImageFormatError(f"not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError("non-integer PPM header field") from None
    if w <= 0 or h <= 0 or maxval != 255:
        raise ImageFormatError(f"unsupported PPM geometry {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    need = w * h * 3
    if len(data) - pos < need:
        raise ImageFormatError(f"PPM raster truncated: {len(data) - pos} of {need} bytes")
    return np.frombuffer(data, np.uint8, need, pos).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def depth_image(depth) -> np.ndarray:
    """Near surfaces bright, far dark, background black; grey (H, W, 3) uint8."""
    d = np.asarray(depth, dtype=float)
    fin = np.isfinite(d)
    out = np.zeros(d.shape, dtype=np.uint8)
    if fin.any():
        lo, hi = d[fin].min(), d[fin].max()
        span = hi - lo if hi > lo else 1.0
        out[fin] = np.round(255.0 - 200.0 * (d[fin] - lo) / span).astype(np.uint8)
    return np.repeat(out[..., None], 3, axis=2)


def id_image(ids) -> np.ndarray:
    """Distinct pseudo-random colour per triangle id; background black."""
    ids = np.asarray(ids, dtype=np.int64)
    h = (ids * 2654435761) & 0xFFFFFF
    rgb = np.stack([(h >> 16) & 255, (h >> 8) & 255, h & 255], axis=-1)
    rgb = 64 + rgb % 192
    rgb[ids < 0] = 0
    return rgb.astype(np.uint8)


def encode_raw(array, kind) -> bytes:
    a = np.asarray(array)
    if a.ndim != 2:
        raise ParameterError("raw dumps hold 2-D maps")
    dt = _RAW_KINDS[kind]
    h, w = a.shape
    return _RAW_HEADER.pack(RAW_MAGIC, kind, 0, 0, h, w) + np.ascontiguousarray(a, dtype=dt).tobytes()


def decode_raw(data: bytes) -> np.ndarray:
    if len(data) < _RAW_HEADER.size:
        raise ImageFormatError("raw map header truncated")
    magic, kind, _, _, h, w = _RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise ImageFormatError(f"bad raw map magic {magic!r}")
    if kind not in _RAW_KINDS:
        raise ImageFormatError(f"unknown raw map kind {kind}")
    dt = np.dtype(_RAW_KINDS[kind])
    if len(data) != _RAW_HEADER.size + h * w * dt.itemsize:
        raise ImageFormatError("raw map payload size does not match its header")
    a = np.frombuffer(data, dt, h * w, _RAW_HEADER.size).reshape(h, w)
    return a.astype(np.float64 if kind == 0 else np.int64)


def write_depth(path_stem, depth):
    """Writes ``<stem>.ppm`` (normalised) and ``<stem>.raw`` (exact)."""
    atomic_write_bytes(f"{path_stem}.ppm", encode_ppm(depth_image(depth)))
    atomic_write_bytes(f"{path_stem}.raw", encode_raw(depth, 0))


def write_ids(path_stem, ids):
    atomic_write_bytes(f"{path_stem}.ppm", encode_ppm(id_image(ids)))
    atomic_write_bytes(f"{path_stem}.raw", encode_raw(ids, 1))


def read_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_raw(fh.read())
