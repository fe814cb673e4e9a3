"""Embedding -> regular m x m grid, by nearest neighbour or softmax blending."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, ops
from .embedder import Embedding2D
from .geometry.cloud import PointCloud
from .geometry.knn import knn, nearest_both

DEFAULT_K = 5
TAU_MIN = 1e-8


@dataclass(frozen=True, eq=False)
class CanonicalGrid:
    """Row-major lattice over [0, 1]^2: index r*m + c sits at (c, r) / (m - 1)."""

    m: int
    points: np.ndarray

    @property
    def size(self) -> int:
        return self.m * self.m

    @property
    def spacing(self) -> float:
        return 1.0 / (self.m - 1)


def make_grid(m: int) -> CanonicalGrid:
    if m < 2:
        raise ValueError("m must be ≥ 2")
    axis = np.arange(m, dtype=np.float64) / (m - 1)
    v, u = np.meshgrid(axis, axis, indexing="ij")
    return CanonicalGrid(m, np.stack([u.ravel(), v.ravel()], axis=1))


@dataclass(eq=False)
class ResampleOutput:
    q: Tensor
    mode: str
    index_map: Optional[np.ndarray] = None
    neighbors: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    # normalized source points the grid was sampled from
    source: Optional[np.ndarray] = None


def _uv(emb) -> np.ndarray:
    if isinstance(emb, Embedding2D):
        return emb.uv
    if isinstance(emb, Tensor):
        return emb.data
    return np.asarray(emb, dtype=np.float64)


def _xyz(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    if isinstance(cloud, Tensor):
        return cloud.data
    return np.asarray(cloud, dtype=np.float64)


def hard_resample(emb, cloud, grid: CanonicalGrid) -> ResampleOutput:
    """Each grid point takes the source point whose embedding is nearest to it."""
    uv, xyz = _uv(emb), _xyz(cloud)
    if len(uv) == 0 or len(xyz) == 0:
        raise ValueError("hard_resample needs non-empty inputs")
    if len(uv) != len(xyz):
        raise ValueError(f"embedding has {len(uv)} points but the cloud has {len(xyz)}")
    idx, _ = knn(grid.points, uv, 1)
    index_map = idx[:, 0]
    return ResampleOutput(Tensor(xyz[index_map]), "hard", index_map=index_map, source=xyz)


def soft_resample(emb, cloud, grid: CanonicalGrid, k: int = DEFAULT_K, tau=1e-5,
                  tau_min: float = TAU_MIN) -> ResampleOutput:
    """Blend each grid point's ``k`` nearest source points with softmax(-d / |tau|).

    Differentiable in ``emb``, ``cloud`` and ``tau`` when those are tracked;
    the neighbour selection itself is fixed per call. ``|tau|`` is floored at
    ``tau_min``.
    """
    if tau_min <= 0:
        raise ValueError("tau_min must be positive")
    uv = _uv(emb)
    n = len(uv)
    if len(_xyz(cloud)) != n:
        raise ValueError(f"embedding has {n} points but the cloud has {len(_xyz(cloud))}")
    if not 1 <= k <= n:
        raise ValueError(f"K={k} must lie in [1, N={n}]")
    emb_t = emb if isinstance(emb, Tensor) else Tensor(uv)
    pts_t = cloud if isinstance(cloud, Tensor) else Tensor(_xyz(cloud))
    tau_t = tau if isinstance(tau, Tensor) else Tensor(float(tau))

    idx, _ = knn(grid.points, uv, k)
    near = ops.gather_rows(emb_t, idx)                       # (M, K, 2)
    dist = ops.norm(ops.sub(grid.points[:, None, :], near))  # (M, K)
    temp = ops.maximum(ops.absolute(tau_t), tau_min)
    weights = ops.softmax(ops.scale(ops.div(dist, temp), -1.0), axis=1)
    picked = ops.gather_rows(pts_t, idx)                     # (M, K, 3)
    q = ops.sum(ops.mul(ops.reshape(weights, (grid.size, k, 1)), picked), axis=1)
    return ResampleOutput(q, "soft", neighbors=idx, weights=weights.data, source=_xyz(cloud))


def annealing_loss(tau) -> Tensor:
    return ops.absolute(tau)


def joint_loss(rep, ann, alpha: float = 1.0, beta: float = 0.1, aux=None) -> Tensor:
    total = ops.add(ops.scale(rep, alpha), ops.scale(ann, beta))
    if aux is not None:
        total = ops.add(total, aux)
    return total


def chamfer_loss(q, source) -> Tensor:
    """On-tape symmetric Chamfer distance, same convention as :func:`geometry.chamfer`."""
    q = q if isinstance(q, Tensor) else Tensor(q)
    src = _xyz(source)
    to_src, to_q = nearest_both(q.data, src)
    fwd = ops.mean(ops.sum(ops.square_diff(q, src[to_src]), axis=1))
    bwd = ops.mean(ops.sum(ops.square_diff(ops.gather_rows(q, to_q), src), axis=1))
    return ops.scale(ops.add(fwd, bwd), 0.5)
