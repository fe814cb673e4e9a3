from __future__ import annotations

import numpy as np

from .cloud import PointCloud

SHAPES = ("sphere", "torus", "cube-surface")
TORUS_R = 1.0
TORUS_r = 0.3


def sample_synthetic(kind: str, n: int, seed: int = 0) -> PointCloud:
    """Area-uniform random samples on a unit sphere, a torus, or a cube surface."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if kind == "sphere":
        g = rng.standard_normal((n, 3))
        pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    elif kind == "torus":
        pts = _torus(rng, n)
    elif kind == "cube-surface":
        face = rng.integers(0, 6, n)
        uv = rng.uniform(-1.0, 1.0, (n, 2))
        axis = face // 2
        sign = np.where(face % 2 == 0, -1.0, 1.0)
        pts = np.empty((n, 3))
        for a in range(3):
            others = [b for b in range(3) if b != a]
            sel = axis == a
            pts[sel, a] = sign[sel]
            pts[sel, others[0]] = uv[sel, 0]
            pts[sel, others[1]] = uv[sel, 1]
    else:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPES}")
    return PointCloud(pts)


def _torus(rng: np.random.Generator, n: int) -> np.ndarray:
    # rejection on the tube angle makes the density proportional to area
    theta = np.empty(0)
    while len(theta) < n:
        t = rng.uniform(0.0, 2 * np.pi, 2 * n)
        w = rng.uniform(0.0, TORUS_R + TORUS_r, 2 * n)
        theta = np.concatenate([theta, t[w <= TORUS_R + TORUS_r * np.cos(t)]])
    theta = theta[:n]
    phi = rng.uniform(0.0, 2 * np.pi, n)
    ring = TORUS_R + TORUS_r * np.cos(theta)
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), TORUS_r * np.sin(theta)], axis=1)
