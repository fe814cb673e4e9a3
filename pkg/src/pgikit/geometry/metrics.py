from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .knn import nearest_both


@dataclass(frozen=True)
class MetricsReport:
    chamfer: float
    hausdorff: float
    coverage: float | None = None

    def line(self) -> str:
        s = f"chamfer={self.chamfer:.6g} hausdorff={self.hausdorff:.6g}"
        if self.coverage is not None:
            s += f" coverage={self.coverage:.6g}"
        return s


def _points(x) -> np.ndarray:
    pts = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("metrics need non-empty point sets")
    return pts


def _sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    diff *= diff
    return diff[:, 0] + diff[:, 1] + diff[:, 2]


def _nearest_sq(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared NN distances a->b and b->a."""
    ab, ba = nearest_both(a, b)
    return _sq(a, b[ab]), _sq(b, a[ba])


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: 0.5 * (mean sq. NN dist a->b + b->a)."""
    a, b = _points(a), _points(b)
    ab, ba = _nearest_sq(a, b)
    return 0.5 * (math.fsum(ab) / len(a) + math.fsum(ba) / len(b))


def hausdorff(a, b) -> float:
    a, b = _points(a), _points(b)
    ab, ba = _nearest_sq(a, b)
    return math.sqrt(max(float(ab.max()), float(ba.max())))


def coverage(index_map, n: int) -> float:
    """Fraction of the ``n`` source indices present in ``index_map``."""
    return len(np.unique(np.asarray(index_map).ravel())) / n


def compare(a, b) -> MetricsReport:
    return MetricsReport(chamfer(a, b), hausdorff(a, b))
