"""Point cloud -> unit-square embedding network and its repulsion loss.

A PointNet-style shared MLP with max pooling produces a global shape code
``c``. Two folding-style unfolding units then map each point, conditioned
on ``c``, to 2D; a final sigmoid keeps the embedding in [0, 1]^2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Union

import numpy as np

from .autodiff import Tape, Tensor, ops
from .geometry.knn import nearest_other

BACKBONE_WIDTHS = (64, 128, 256)
UNFOLD_WIDTHS = (256, 128, 64, 2)
DEFAULT_FEATURE_DIM = 512

Array = Union[np.ndarray, Tensor]
Layers = list  # list of (weight, bias) pairs

PNW_MAGIC = b"PNW1"
PNW_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class EmbedderParams:
    """All trainable state: three MLPs plus the resampling temperature.

    Entries are numpy arrays for stored parameters, or tape-tracked
    :class:`Tensor` objects inside a training step (see :meth:`watch`).
    """

    backbone: Layers
    unfold1: Layers
    unfold2: Layers
    tau: Array
    feature_dim: int = field(default=DEFAULT_FEATURE_DIM)

    def tensors(self) -> list:
        """Flat list in checkpoint order."""
        out = []
        for layers in (self.backbone, self.unfold1, self.unfold2):
            for w, b in layers:
                out += [w, b]
        out.append(self.tau)
        return out

    @classmethod
    def from_tensors(cls, tensors, feature_dim: int) -> "EmbedderParams":
        tensors = list(tensors)
        if len(tensors) != 25:
            raise ValueError(f"expected 25 parameter tensors, got {len(tensors)}")

        def pairs(chunk):
            return [(chunk[i], chunk[i + 1]) for i in range(0, len(chunk), 2)]

        return cls(pairs(tensors[0:8]), pairs(tensors[8:16]), pairs(tensors[16:24]),
                   tensors[24], feature_dim)

    def shapes(self) -> list[tuple[int, ...]]:
        return expected_shapes(self.feature_dim)

    def watch(self, tape: Tape) -> "EmbedderParams":
        return EmbedderParams.from_tensors(
            [tape.watch(t) for t in self.tensors()], self.feature_dim)

    def copy(self) -> "EmbedderParams":
        return EmbedderParams.from_tensors(
            [np.array(t, dtype=np.float64) for t in self.tensors()], self.feature_dim)


def expected_shapes(feature_dim: int) -> list[tuple[int, ...]]:
    shapes = []
    widths = (3,) + BACKBONE_WIDTHS + (feature_dim,)
    for a, b in zip(widths[:-1], widths[1:]):
        shapes += [(a, b), (b,)]
    for extra in (3, 2):
        widths = (feature_dim + extra,) + UNFOLD_WIDTHS
        for a, b in zip(widths[:-1], widths[1:]):
            shapes += [(a, b), (b,)]
    shapes.append(())
    return shapes


def init_params(feature_dim: int = DEFAULT_FEATURE_DIM, seed=0, tau: float = 1e-5) -> EmbedderParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = []
    for shape in expected_shapes(feature_dim)[:-1]:
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors.append(rng.uniform(-limit, limit, shape))
        else:
            tensors.append(np.zeros(shape))
    tensors.append(np.array(float(tau)))
    return EmbedderParams.from_tensors(tensors, feature_dim)


def zero_params(feature_dim: int, tau: float = 1e-5) -> EmbedderParams:
    tensors = [np.zeros(s) for s in expected_shapes(feature_dim)[:-1]]
    tensors.append(np.array(float(tau)))
    return EmbedderParams.from_tensors(tensors, feature_dim)


def _mlp(x, layers, relu_last: bool) -> Tensor:
    for i, (w, b) in enumerate(layers):
        x = ops.bias_add(ops.matmul(x, w), b)
        if relu_last or i + 1 < len(layers):
            x = ops.relu(x)
    return x


def extract_global_feature(points: Array, params: EmbedderParams) -> Tensor:
    """Shared per-point MLP followed by a max over points; returns shape (D,)."""
    return ops.max_rows(_mlp(points, params.backbone, relu_last=True))


def embed(points: Array, params: EmbedderParams) -> Tensor:
    """Per-point 2D embedding in [0, 1]^2, shape (N, 2), index-aligned with ``points``."""
    pts = points if isinstance(points, Tensor) else Tensor(points)
    n = pts.shape[0]
    code = ops.broadcast_rows(extract_global_feature(pts, params), n)
    first = _mlp(ops.concat([pts, code]), params.unfold1, relu_last=False)
    second = _mlp(ops.concat([first, code]), params.unfold2, relu_last=False)
    return ops.sigmoid(second)


@dataclass(frozen=True, eq=False)
class Embedding2D:
    uv: np.ndarray

    def __post_init__(self):
        uv = np.asarray(self.uv, dtype=np.float64)
        if uv.ndim != 2 or uv.shape[1] != 2:
            raise ValueError(f"uv must have shape (N, 2), got {uv.shape}")
        object.__setattr__(self, "uv", uv)

    def __len__(self) -> int:
        return len(self.uv)


def embed_cloud(points, params: EmbedderParams) -> Embedding2D:
    """Off-tape forward pass with frozen parameters."""
    return Embedding2D(embed(np.asarray(points, dtype=np.float64), params).data)


def repulsion_loss(emb: Array, threshold: float) -> Tensor:
    """Mean over points of -log(d + 1 - T) where the nearest-other distance d < T.

    The nearest neighbour of each point is picked off-tape; the gradient then
    flows through both endpoints of every such pair.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    emb = emb if isinstance(emb, Tensor) else Tensor(emb)
    if emb.shape[0] < 2:
        raise ValueError("repulsion needs at least two points")
    nn, _ = nearest_other(emb.data)
    dist = ops.norm(ops.sub(emb, ops.gather_rows(emb, nn)))
    per_point = ops.scale(ops.log(ops.add(dist, 1.0 - threshold)), -1.0)
    return ops.mean(ops.select(per_point, dist.data < threshold))


# -- checkpoint codec -----------------------------------------------------------
#
# "PNW1" | u32 version | u32 D | 25 tensors, each: u32 rank, u32 extents...,
# float64 data row-major. All little-endian. Tensor order: backbone layers
# 1-4 (weight, bias), unfold1 layers 1-4, unfold2 layers 1-4, tau (rank 0).

def encode_params(params: EmbedderParams) -> bytes:
    chunks = [PNW_MAGIC, struct.pack("<II", PNW_VERSION, params.feature_dim)]
    for t, shape in zip(params.tensors(), params.shapes()):
        arr = np.asarray(t, dtype=np.float64)
        if arr.shape != shape:
            raise CheckpointError(f"tensor shape {arr.shape} does not match expected {shape}")
        chunks.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
        chunks.append(arr.astype("<f8").tobytes())
    return b"".join(chunks)


def decode_params(blob: bytes) -> EmbedderParams:
    if blob[:4] != PNW_MAGIC:
        raise CheckpointError("bad magic")
    if len(blob) < 12:
        raise CheckpointError("truncated payload")
    version, dim = struct.unpack_from("<II", blob, 4)
    if version != PNW_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    pos = 12
    tensors = []
    for shape in expected_shapes(dim):
        if pos + 4 > len(blob):
            raise CheckpointError("truncated payload")
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + 4 * rank > len(blob):
            raise CheckpointError("truncated payload")
        extents = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        if tuple(extents) != shape:
            raise CheckpointError(f"tensor shape {tuple(extents)} does not match expected {shape}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError("truncated payload")
        arr = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos)
        tensors.append(arr.astype(np.float64).reshape(shape))
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last tensor")
    return EmbedderParams.from_tensors(tensors, dim)


def write_params(params: EmbedderParams, sink: BinaryIO) -> None:
    sink.write(encode_params(params))


def read_params(source: BinaryIO) -> EmbedderParams:
    return decode_params(source.read())


def save_params(params: EmbedderParams, path) -> None:
    with open(path, "wb") as fh:
        write_params(params, fh)


def load_params(path) -> EmbedderParams:
    with open(path, "rb") as fh:
        return read_params(fh)

