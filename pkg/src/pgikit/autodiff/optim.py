"""Adam with bias correction, as a pure function over lists of arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tape import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: list[np.ndarray] = field(default_factory=list)
    second: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls(
            first=[np.zeros_like(p, dtype=np.float64) for p in params],
            second=[np.zeros_like(p, dtype=np.float64) for p in params],
            **hyper,
        )


def adam_step(params, grads, state: AdamState):
    """Return ``(new_params, new_state)``; inputs are left untouched."""
    if not (len(params) == len(grads) == len(state.first) == len(state.second)):
        raise ShapeError("adam_step: params, grads and moments differ in count")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_params, new_first, new_second = [], [], []
    for p, g, m, v in zip(params, grads, state.first, state.second):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"adam_step: shape mismatch {p.shape} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p - update)
        new_first.append(m)
        new_second.append(v)
    new_state = AdamState(state.lr, b1, b2, state.eps, step, new_first, new_second)
    return new_params, new_state
