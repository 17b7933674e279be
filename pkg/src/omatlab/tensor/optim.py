"""Plain SGD and AdamW (decoupled weight decay) over tape parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Tensor


@dataclass
class OptimizerState:
    kind: str = "sgd"  # "sgd" | "adamw"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def sgd(learning_rate: float) -> OptimizerState:
    return OptimizerState(kind="sgd", learning_rate=learning_rate)


def adamw(learning_rate: float, weight_decay: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
    return OptimizerState(
        kind="adamw",
        learning_rate=learning_rate,
        weight_decay=weight_decay,
        beta1=betas[0],
        beta2=betas[1],
        epsilon_hat=eps,
    )


def optimizer_step(state: OptimizerState, params: Sequence[Tensor], grads: Mapping) -> Sequence[Tensor]:
    """Update ``params`` in place (rebinding ``.data``) and return them.

    ``grads`` is the map returned by :func:`backward`; every parameter must
    have an entry.
    """
    for p in params:
        if p.node_id is None or p.node_id not in grads:
            raise KeyError(f"no gradient for parameter {p!r}")
    state.step += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p in params:
            p.data = p.data - lr * _arr(grads[p.node_id])
        return params

    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p in params:
        g = _arr(grads[p.node_id])
        key = p.node_id
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        m = b1 * state.m[key] + (1.0 - b1) * g
        v = b2 * state.v[key] + (1.0 - b2) * g * g
        state.m[key], state.v[key] = m, v
        data = p.data
        if state.weight_decay:
            data = data - lr * state.weight_decay * data
        p.data = data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon_hat)
    return params


def _arr(g) -> np.ndarray:
    return g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
