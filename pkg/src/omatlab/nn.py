"""Small MLP building blocks on top of the tape."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .rng import Rng

Params = dict[str, T.Tensor]


def init_linear(rng: Rng, fan_in: int, fan_out: int, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """He-style normal weights (fan_in x fan_out) and zero bias."""
    w = rng.normal((fan_in, fan_out), std=scale * math.sqrt(2.0 / fan_in))
    return w, np.zeros(fan_out)


def init_mlp(rng: Rng, widths: Sequence[int], prefix: str, out_scale: float = 1.0) -> Params:
    params: Params = {}
    n = len(widths) - 1
    for i in range(n):
        s = out_scale if i == n - 1 else 1.0
        w, b = init_linear(rng, widths[i], widths[i + 1], s)
        params[f"{prefix}.{i}.weight"] = T.Tensor(w, requires_grad=True)
        params[f"{prefix}.{i}.bias"] = T.Tensor(b, requires_grad=True)
    return params


def mlp_layer_count(params: Params, prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.weight" in params:
        n += 1
    return n


def linear(x: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.add_bias(T.matmul(x, w), b)


def mlp_forward(params: Params, prefix: str, x: T.Tensor, final_activation: bool = False) -> T.Tensor:
    n = mlp_layer_count(params, prefix)
    for i in range(n):
        x = linear(x, params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"])
        if i < n - 1 or final_activation:
            x = T.relu(x)
    return x


def leaf_copy(params: Params, requires_grad: bool = True) -> Params:
    """Fresh leaves with copied data (new node ids)."""
    return {k: T.Tensor(v.data.copy(), requires_grad=requires_grad) for k, v in params.items()}


def mse(pred: T.Tensor, target: T.Tensor) -> T.Tensor:
    d = T.sub(pred, target)
    return T.mean(T.mul(d, d))
