"""Reverse-mode automatic differentiation over 64-bit numpy arrays.

Every differentiable op creates a node that remembers its parents and a
backward rule. Node ids come from a monotonically increasing counter, so
sorting the reachable nodes by id descending gives a strict reverse
topological order; that sorted list is the "tape" replayed by
:func:`backward`.

Broadcasting is deliberately narrow: elementwise binary ops require equal
shapes, and :func:`add_bias` adds a tensor whose shape equals the trailing
axes of the other operand.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "GradMap",
    "TapeConsumedError",
    "ShapeError",
    "tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "matmul",
    "add_bias",
    "relu",
    "sigmoid",
    "tanh",
    "sum",
    "mean",
    "clamp01",
    "concat",
    "reshape",
    "transpose",
    "round_straight_through",
    "bce_with_logits",
]


class ShapeError(ValueError):
    pass


class TapeConsumedError(RuntimeError):
    pass


_ids = itertools.count(1)
_id_lock = threading.Lock()


def _next_id() -> int:
    with _id_lock:
        return next(_ids)


class _Node:
    __slots__ = ("parents", "backward_fn", "consumed", "op")

    def __init__(self, op: str, parents: tuple["Tensor", ...], backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """A float64 array with an optional slot on the gradient tape.

    Leaves created with ``requires_grad=True`` get a node id immediately;
    results of ops get one whenever any operand is tracked.
    """

    __slots__ = ("data", "requires_grad", "node_id", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0 or any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = _next_id() if requires_grad else None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.node_id is not None

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __radd__(self, other):
        return add(_as_tensor(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x, shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.broadcast_to(np.asarray(x, dtype=np.float64), shape))


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out._node = None
    if any(p.tracked for p in parents):
        out.requires_grad = True
        out.node_id = _next_id()
        out._node = _Node(op, tuple(parents), backward_fn)
    else:
        out.requires_grad = False
        out.node_id = None
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    ta, tb = a.tracked, b.tracked
    return _make(
        "mul", ad * bd, (a, b), lambda g: (g * bd if ta else None, g * ad if tb else None)
    )


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _make("scale", a.data * k, (a,), lambda g: (g * k,))


def shift(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("shift", a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    ta, tb = a.tracked, b.tracked
    return _make(
        "matmul", ad @ bd, (a, b), lambda g: (g @ bd.T if ta else None, ad.T @ g if tb else None)
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b.shape`` equals the trailing axes of ``x``."""
    k = b.data.ndim
    if k > x.data.ndim or x.shape[x.data.ndim - k:] != b.shape:
        raise ShapeError(f"add_bias: bias {b.shape} does not match trailing axes of {x.shape}")
    lead = tuple(range(x.data.ndim - k))

    def bw(g):
        return g, g.sum(axis=lead) if lead else g

    return _make("add_bias", x.data + b.data, (x, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    shape = x.shape
    return _make("sum", np.array([x.data.sum()]), (x,), lambda g: (np.full(shape, g[0]),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _make(
        "mean", np.array([x.data.sum() / n]), (x,), lambda g: (np.full(shape, g[0] / n),)
    )


def clamp01(x: Tensor) -> Tensor:
    """Clamp into [0, 1]; gradient passes where 0 <= x <= 1 (boundaries included)."""
    if x.data.size == 0:
        raise ShapeError("clamp01: empty tensor")
    mask = (x.data >= 0.0) & (x.data <= 1.0)
    return _make("clamp01", np.clip(x.data, 0.0, 1.0), (x,), lambda g: (g * mask,))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat: nothing to concatenate")
    ref = parts[0].data
    ax = axis % ref.ndim
    for p in parts[1:]:
        if p.data.ndim != ref.ndim or any(
            p.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat: shape mismatch {parts[0].shape} vs {p.shape} on axis {ax}")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]
    data = np.concatenate([p.data for p in parts], axis=ax)
    return _make("concat", data, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=ax)))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")
    return _make("transpose", x.data.T, (x,), lambda g: (g.T,))


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def round_straight_through(x: Tensor, levels: int = 255) -> Tensor:
    """Quantize to ``round(x * levels) / levels`` with an identity backward."""
    if int(levels) != levels or levels < 2:
        raise ValueError(f"levels must be an integer >= 2, got {levels}")
    d = x.data
    if np.any(d < 0.0) or np.any(d > 1.0) or not np.all(np.isfinite(d)):
        raise ValueError("round_straight_through expects entries in [0, 1]; clamp first")
    out = round_half_away(d * levels) / levels
    return _make("round_st", out, (x,), lambda g: (g,))


def bce_with_logits(s: Tensor, y, weights=None, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on logits, ``max(s,0) - s*y + log(1+exp(-|s|))``.

    ``y`` is a scalar 0/1 or an array of 0/1 matching ``s``. Optional
    per-element ``weights`` scale each term before the reduction; ``"mean"``
    divides by the element count, ``"sum"`` does not.
    """
    yd = np.broadcast_to(np.asarray(y, dtype=np.float64), s.shape)
    if not np.all((yd == 0.0) | (yd == 1.0)):
        raise ValueError("bce_with_logits targets must be exactly 0 or 1")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    w = None if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), s.shape)
    d = s.data
    losses = np.maximum(d, 0.0) - d * yd + np.log1p(np.exp(-np.abs(d)))
    if w is not None:
        losses = losses * w
    n = d.size if reduction == "mean" else 1

    def bw(g):
        p = np.empty_like(d)
        pos = d >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        e = np.exp(d[~pos])
        p[~pos] = e / (1.0 + e)
        dl = p - yd
        if w is not None:
            dl = dl * w
        return (dl * (g[0] / n),)

    return _make("bce_with_logits", np.array([losses.sum() / n]), (s,), bw)


# ---------------------------------------------------------------------------
# backward


class GradMap(dict):
    """Gradients keyed by node id; also indexable by the tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__contains__(key)

    def get(self, key, default=None):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().get(key, default)


@dataclass(frozen=True)
class Tape:
    """Reachable nodes of one graph in strict reverse topological order."""

    records: tuple[Tensor, ...]

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [out]
        while stack:
            t = stack.pop()
            if t.node_id is None or t.node_id in seen:
                continue
            seen[t.node_id] = t
            if t._node is not None:
                stack.extend(t._node.parents)
        return cls(tuple(seen[k] for k in sorted(seen, reverse=True)))

    def ops(self) -> list[str]:
        return [t._node.op for t in self.records if t._node is not None]


def backward(loss: Tensor) -> GradMap:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns gradients for every tracked leaf with ``requires_grad``. The
    graph is consumed: a second call raises :class:`TapeConsumedError`.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None:
        raise ValueError("loss is not on a tape (no operand requires grad)")
    tape = Tape.from_output(loss)
    for t in tape.records:
        if t._node is not None and t._node.consumed:
            raise TapeConsumedError("graph already consumed by a previous backward()")

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    out = GradMap()
    for t in tape.records:
        g = grads.pop(t.node_id, None)
        node = t._node
        if node is None:
            if t.requires_grad:
                out[t.node_id] = Tensor(g if g is not None else np.zeros_like(t.data))
            continue
        node.consumed = True
        if g is None:
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if p.node_id is None or pg is None:
                continue
            if p.node_id in grads:
                grads[p.node_id] = grads[p.node_id] + pg
            else:
                grads[p.node_id] = np.array(pg, dtype=np.float64, copy=True).reshape(p.shape)
        node.backward_fn = None
    return out


def grad_of(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    gm = backward(loss)
    return [gm[t].data if t in gm else np.zeros_like(t.data) for t in wrt]
