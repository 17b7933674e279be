"""Low-rank adapters on frozen backbone layers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..detector.model import Detector
from ..rng import Rng


@dataclass
class LoraAdapter:
    """Adds ``(alpha / r) * B @ A`` to a layer's weight; ``B`` starts at zero.

    Weights in this code base are stored ``(in, out)`` so the adapter path
    computes ``dropout(h) @ A.T @ B.T``.
    """

    target: str
    rank: int
    alpha: float
    dropout: float
    A: T.Tensor  # (r, in)
    B: T.Tensor  # (out, r)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self, h: T.Tensor, training: bool = False, rng: Rng | None = None) -> T.Tensor:
        if training and self.dropout > 0.0:
            if rng is None:
                raise ValueError("adapter dropout in training mode needs an rng")
            keep = 1.0 - self.dropout
            mask = rng.numpy_generator().random(h.shape) < keep
            h = T.mul(h, T.Tensor(mask / keep))
        low = T.matmul(h, T.transpose(self.A))
        return T.scale(T.matmul(low, T.transpose(self.B)), self.scaling)

    def parameters(self) -> list[T.Tensor]:
        return [self.A, self.B]

    def trainable(self) -> "LoraAdapter":
        return LoraAdapter(
            self.target, self.rank, self.alpha, self.dropout,
            T.Tensor(self.A.data.copy(), requires_grad=True),
            T.Tensor(self.B.data.copy(), requires_grad=True),
        )

    def frozen(self) -> "LoraAdapter":
        return LoraAdapter(
            self.target, self.rank, self.alpha, self.dropout,
            T.Tensor(self.A.data.copy()), T.Tensor(self.B.data.copy()),
        )

    def merged_weight(self, w: np.ndarray) -> np.ndarray:
        return w + self.scaling * (self.B.data @ self.A.data).T


def apply_lora(
    d: Detector,
    targets: Sequence[str] | None,
    rank: int,
    rng: Rng,
    alpha: float | None = None,
    dropout: float = 0.1,
) -> Detector:
    """Attach fresh adapters (alpha defaults to ``2 * rank``) to backbone layers."""
    targets = list(targets) if targets is not None else d.layer_names()
    adapters = dict(d.adapters)
    for name in targets:
        key = f"{name}.weight"
        if key not in d.params or not name.startswith("backbone."):
            raise KeyError(f"no backbone layer named {name!r}")
        fan_in, fan_out = d.params[key].shape
        if rank < 1 or rank >= min(fan_in, fan_out):
            raise ValueError(f"rank {rank} must be in [1, min({fan_in}, {fan_out}))")
        a = rng.normal((rank, fan_in), std=1.0 / math.sqrt(fan_in))
        adapters[name] = LoraAdapter(
            name, rank, float(alpha if alpha is not None else 2 * rank), dropout,
            T.Tensor(a), T.Tensor(np.zeros((fan_out, rank))),
        )
    return d.with_params(dict(d.params), adapters)


def merge_lora(d: Detector) -> Detector:
    """Fold adapters into plain weights (eval-mode equivalent)."""
    params = {k: T.Tensor(v.data.copy()) for k, v in d.params.items()}
    for name, ad in d.adapters.items():
        params[f"{name}.weight"] = T.Tensor(ad.merged_weight(d.params[f"{name}.weight"].data))
    return d.with_params(params, {})


def trainable_count(d: Detector) -> int:
    head = sum(d.params[k].data.size for k in d.head_keys())
    return head + sum(a.A.data.size + a.B.data.size for a in d.adapters.values())
