"""Central finite-difference oracle for checking tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward


def numeric_grad(f: Callable[[Sequence[np.ndarray]], float], arrays: Sequence[np.ndarray], h: float = 1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of ``arrays``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-n| / max(|a|, |n|), ignoring entries whose absolute gap is below ``floor``."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    gap = np.abs(a - n)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    rel = np.where(gap <= floor, 0.0, gap / denom)
    return float(rel.max()) if rel.size else 0.0


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-8,
    reference: Callable[..., Tensor] | None = None,
) -> float:
    """Largest relative error between tape and finite-difference gradients.

    ``fn`` maps input tensors to a scalar tensor. ``reference`` (default
    ``fn``) is the function differenced numerically; pass a surrogate when
    ``fn`` contains straight-through ops whose forward is piecewise constant.
    """
    ref = reference or fn
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    gm = backward(fn(*leaves))
    analytic = [gm[t].data if t in gm else np.zeros_like(t.data) for t in leaves]
    numeric = numeric_grad(lambda arrs: ref(*[Tensor(a) for a in arrs]).item(), inputs, h)
    return max(max_rel_error(a, n, floor) for a, n in zip(analytic, numeric))
