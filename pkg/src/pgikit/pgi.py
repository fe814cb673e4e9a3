"""Point geometry image container, "PGI1" codec, decoding and PNG preview.

Binary layout (little-endian)::

    b"PGI1"  u32 version=1  u32 m  u32 source_n  u8 flags
    f64 centroid_x, centroid_y, centroid_z, scale
    f32 pixels[m * m * 3]          row-major, normalized coordinates
    u32 index_map[m * m]           only when flags & 1
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Optional

import numpy as np
from PIL import Image

from .geometry.cloud import NormMeta, PointCloud
from .resampler import CanonicalGrid, ResampleOutput

MAGIC = b"PGI1"
VERSION = 1
FLAG_INDEX_MAP = 0x01
_HEADER = struct.Struct("<4sIIIB4d")


class PgiFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Pgi:
    m: int
    pixels: np.ndarray  # (m, m, 3) float32
    meta: NormMeta
    source_n: int
    index_map: Optional[np.ndarray] = None  # (m, m) uint32

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if self.m < 2 or px.shape != (self.m, self.m, 3):
            raise ValueError(f"pixels must have shape ({self.m}, {self.m}, 3), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("PGI pixels must be finite")
        object.__setattr__(self, "pixels", px)
        if self.index_map is not None:
            im = np.asarray(self.index_map)
            if im.shape != (self.m, self.m):
                raise ValueError(f"index map must have shape ({self.m}, {self.m})")
            if im.size and (im.min() < 0 or im.max() >= self.source_n):
                raise ValueError("index map entry out of range")
            object.__setattr__(self, "index_map", im.astype(np.uint32))

    @property
    def coverage(self) -> Optional[float]:
        if self.index_map is None:
            return None
        return len(np.unique(self.index_map)) / self.source_n

    def same_as(self, other: "Pgi") -> bool:
        """Structural, bit-exact equality."""
        if (self.m, self.source_n) != (other.m, other.source_n):
            return False
        if self.pixels.tobytes() != other.pixels.tobytes():
            return False
        if self.meta.centroid.tobytes() != other.meta.centroid.tobytes():
            return False
        if np.float64(self.meta.scale).tobytes() != np.float64(other.meta.scale).tobytes():
            return False
        if (self.index_map is None) != (other.index_map is None):
            return False
        return self.index_map is None or np.array_equal(self.index_map, other.index_map)


def from_resample(out: ResampleOutput, grid: CanonicalGrid, meta: NormMeta, source_n: int) -> Pgi:
    q = out.q.data
    if q.shape != (grid.size, 3):
        raise ValueError(f"expected {grid.size} resampled points, got {q.shape[0]}")
    index_map = None if out.index_map is None else out.index_map.reshape(grid.m, grid.m)
    return Pgi(grid.m, q.reshape(grid.m, grid.m, 3), meta, source_n, index_map)


def decode(pgi: Pgi, dedupe: bool = False) -> PointCloud:
    """Pixels back to a point cloud in the source's original units.

    With ``dedupe`` each source index present in the index map yields one
    point, ordered by source index.
    """
    flat = pgi.pixels.reshape(-1, 3).astype(np.float64)
    if dedupe:
        if pgi.index_map is None:
            raise ValueError("dedupe requires an index map (hard-resampled PGI)")
        _, first = np.unique(pgi.index_map.ravel(), return_index=True)
        flat = flat[first]
    return PointCloud(flat * pgi.meta.scale + pgi.meta.centroid)


def encode_pgi(pgi: Pgi) -> bytes:
    flags = FLAG_INDEX_MAP if pgi.index_map is not None else 0
    c = pgi.meta.centroid
    parts = [
        _HEADER.pack(MAGIC, VERSION, pgi.m, pgi.source_n, flags, c[0], c[1], c[2], pgi.meta.scale),
        pgi.pixels.astype("<f4").tobytes(),
    ]
    if pgi.index_map is not None:
        parts.append(pgi.index_map.astype("<u4").tobytes())
    return b"".join(parts)


def decode_pgi(blob: bytes) -> Pgi:
    if blob[:4] != MAGIC:
        raise PgiFormatError("bad magic")
    if len(blob) < _HEADER.size:
        raise PgiFormatError("truncated payload")
    _, version, m, source_n, flags, cx, cy, cz, scale = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise PgiFormatError(f"version mismatch: expected {VERSION}, got {version}")
    if m < 2:
        raise PgiFormatError(f"invalid resolution m={m}")
    if flags & ~FLAG_INDEX_MAP:
        raise PgiFormatError(f"unsupported flags {flags:#x}")
    pos = _HEADER.size
    npix = m * m * 3
    if len(blob) < pos + 4 * npix:
        raise PgiFormatError("truncated payload")
    pixels = np.frombuffer(blob, "<f4", npix, pos).astype(np.float32).reshape(m, m, 3)
    pos += 4 * npix
    index_map = None
    if flags & FLAG_INDEX_MAP:
        if len(blob) < pos + 4 * m * m:
            raise PgiFormatError("truncated payload")
        index_map = np.frombuffer(blob, "<u4", m * m, pos).astype(np.uint32).reshape(m, m)
        pos += 4 * m * m
        if index_map.max() >= source_n:
            raise PgiFormatError("index out of range")
    if pos != len(blob):
        raise PgiFormatError("trailing bytes after payload")
    try:
        meta = NormMeta(np.array([cx, cy, cz]), scale)
        return Pgi(m, pixels, meta, source_n, index_map)
    except ValueError as exc:
        raise PgiFormatError(str(exc)) from None


def write_pgi(pgi: Pgi, sink: BinaryIO) -> None:
    sink.write(encode_pgi(pgi))


def read_pgi(source: BinaryIO) -> Pgi:
    return decode_pgi(source.read())


def save_pgi(pgi: Pgi, path) -> None:
    with open(path, "wb") as fh:
        write_pgi(pgi, fh)


def load_pgi(path) -> Pgi:
    with open(path, "rb") as fh:
        return read_pgi(fh)


def preview_rgb(pixels) -> np.ndarray:
    """Map normalized coordinates in [-1, 1] to bytes, rounding half up."""
    v = np.clip(np.asarray(pixels, dtype=np.float64), -1.0, 1.0)
    return np.floor((v + 1.0) / 2.0 * 255.0 + 0.5).astype(np.uint8)


def preview_png(pgi: Pgi, sink) -> None:
    """Lossy 8-bit RGB preview; never read back as geometry."""
    Image.fromarray(preview_rgb(pgi.pixels)).save(sink, format="PNG")
