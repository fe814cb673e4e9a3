from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class NormMeta:
    """Inverse of a normalization: ``original = normalized * scale + centroid``."""

    centroid: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=np.float64).reshape(3))
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"normalization scale must be positive, got {self.scale}")


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    meta: Optional[NormMeta] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def denormalized(self) -> np.ndarray:
        """Points in the original model units."""
        if self.meta is None:
            return self.points.copy()
        return self.points * self.meta.scale + self.meta.centroid


def normalize(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    A cloud whose points all coincide keeps scale 1. If ``cloud`` already
    carries normalization metadata, the returned metadata composes both
    transforms so :meth:`PointCloud.denormalized` still maps back to the
    original units.
    """
    pts = cloud.points
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    radius = float(np.sqrt((centered * centered).sum(axis=1)).max())
    scale = radius if radius > 0 else 1.0
    out = centered / scale
    if cloud.meta is not None:
        prev = cloud.meta
        meta = NormMeta(centroid * prev.scale + prev.centroid, scale * prev.scale)
    else:
        meta = NormMeta(centroid, scale)
    return PointCloud(out, meta)
