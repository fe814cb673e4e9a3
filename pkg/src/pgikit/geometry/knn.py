"""Exact k-nearest-neighbour search in 2D/3D.

Ranking is by squared Euclidean distance with ties going to the lowest
reference index. Small problems use a blocked exhaustive scan; larger ones
go through a uniform spatial hash that falls back to the scan when its
search ring covers the whole grid.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

# exhaustive scan below this many query/reference pairs
HASH_THRESHOLD = 4_000_000
_BLOCK = 1 << 20


def _check(queries, refs, k):
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise ValueError(f"knn: incompatible shapes {q.shape} and {r.shape}")
    if q.shape[1] not in (2, 3):
        raise ValueError(f"knn supports 2D or 3D points, got d={q.shape[1]}")
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(r):
        raise ValueError(f"k={k} exceeds the number of reference points ({len(r)})")
    return q, r


def _smallest_k(sq: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # repeated argmin: np.argmin returns the first minimum, which gives the
    # lowest-index tie rule for free
    sq = sq.copy()
    rows = np.arange(len(sq))
    idx = np.empty((len(sq), k), dtype=np.intp)
    dist = np.empty((len(sq), k))
    for j in range(k):
        a = np.argmin(sq, axis=1)
        idx[:, j] = a
        dist[:, j] = sq[rows, a]
        if j + 1 < k:
            sq[rows, a] = np.inf
    return idx, dist


def _sq_dists(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    # accumulate coordinate by coordinate: same summation order as a plain
    # dx*dx + dy*dy + dz*dz loop, but on contiguous (nq, nr) blocks
    out = np.subtract.outer(q[:, 0], r[:, 0])
    out *= out
    for c in range(1, q.shape[1]):
        d = np.subtract.outer(q[:, c], r[:, c])
        d *= d
        out += d
    return out


def knn_bruteforce(queries, refs, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive scan; returns (indices, squared distances)."""
    q, r = _check(queries, refs, k)
    step = max(1, _BLOCK // max(1, len(r)))
    idx = np.empty((len(q), k), dtype=np.intp)
    sq = np.empty((len(q), k))
    for s in range(0, len(q), step):
        idx[s:s + step], sq[s:s + step] = _smallest_k(_sq_dists(q[s:s + step], r), k)
    return idx, sq


class SpatialHash:
    """Uniform grid over reference points for exact kNN queries."""

    def __init__(self, refs, cell_size: float | None = None, per_cell: int = 4):
        self.refs = np.asarray(refs, dtype=np.float64)
        n, d = self.refs.shape
        lo = self.refs.min(axis=0)
        hi = self.refs.max(axis=0)
        extent = hi - lo
        if cell_size is None:
            live = extent[extent > 1e-9 * max(1.0, float(extent.max()))]
            if len(live):
                cell_size = float((np.prod(live) * per_cell / n) ** (1.0 / len(live)))
            else:
                cell_size = 1.0
        self.h = cell_size
        self.origin = lo
        self.dims = np.floor(extent / cell_size).astype(np.int64) + 1
        cells = self._cell_of(self.refs)
        buckets: dict[tuple, list[int]] = defaultdict(list)
        for i, c in enumerate(map(tuple, cells)):
            buckets[c].append(i)
        self.buckets = {c: np.array(v, dtype=np.intp) for c, v in buckets.items()}

    def _cell_of(self, pts: np.ndarray) -> np.ndarray:
        return np.floor((pts - self.origin) / self.h).astype(np.int64)

    def _ring(self, cell: np.ndarray, r: int) -> np.ndarray:
        ranges = [range(c - r, c + r + 1) for c in cell]
        found = []
        for key in np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, len(cell)):
            hit = self.buckets.get(tuple(int(v) for v in key))
            if hit is not None:
                found.append(hit)
        if not found:
            return np.empty(0, dtype=np.intp)
        return np.sort(np.concatenate(found))

    def query(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        q, r = _check(queries, self.refs, k)
        cells = self._cell_of(q)
        keys, inverse = np.unique(cells, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        idx = np.empty((len(q), k), dtype=np.intp)
        sq = np.empty((len(q), k))
        order = np.argsort(inverse, kind="stable")
        starts = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
        for g, cell in enumerate(keys):
            members = order[starts[g]:starts[g + 1]]
            qs = q[members]
            # rings closer than the reference grid are empty; rings wider
            # than the number of occupied cells are cheaper as a full scan
            gap = int(np.max(np.maximum(-cell, cell - (self.dims - 1))))
            ring = max(1, gap)
            while True:
                full = (2 * ring + 1) ** len(cell) >= len(self.buckets)
                cand = np.arange(len(r)) if full else self._ring(cell, ring)
                if len(cand) >= k:
                    li, ls = _smallest_k(_sq_dists(qs, r[cand]), k)
                    radius = ring * self.h - 1e-12
                    if full or np.all(ls[:, -1] < radius * radius):
                        idx[members] = cand[li]
                        sq[members] = ls
                        break
                ring += 1
        return idx, sq


def knn(queries, refs, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``k`` nearest references per query.

    Returns ``(indices, distances)``, both of shape (n_queries, k), with
    distances ascending.
    """
    q, r = _check(queries, refs, k)
    if len(q) * len(r) <= HASH_THRESHOLD:
        idx, sq = knn_bruteforce(q, r, k)
    else:
        idx, sq = SpatialHash(r).query(q, k)
    return idx, np.sqrt(sq)


def nearest_both(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Nearest b for every a and nearest a for every b, from one distance block.

    Same tie rule as :func:`knn`; falls back to two spatial-hash queries for
    large inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) * len(b) > HASH_THRESHOLD:
        return knn(a, b, 1)[0][:, 0], knn(b, a, 1)[0][:, 0]
    _check(a, b, 1)
    _check(b, a, 1)
    sq = _sq_dists(a, b)
    # column argmin is slow on a C-ordered block; the first row hitting the
    # column minimum is the same answer
    first_col_min = np.argmax(sq == sq.min(axis=0), axis=0)
    return np.argmin(sq, axis=1), first_col_min


def nearest_other(points) -> tuple[np.ndarray, np.ndarray]:
    """For each point, the index and distance of its nearest *other* point."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        raise ValueError("nearest_other needs at least two points")
    step = max(1, _BLOCK // len(p))
    idx = np.empty(len(p), dtype=np.intp)
    sq = np.empty(len(p))
    for s in range(0, len(p), step):
        block = _sq_dists(p[s:s + step], p)
        rows = np.arange(len(block))
        block[rows, rows + s] = np.inf
        a = np.argmin(block, axis=1)
        idx[s:s + step] = a
        sq[s:s + step] = block[rows, a]
    return idx, np.sqrt(sq)
