"""Binary real/fake detectors and the differentiable preprocessing chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..nn import Params, init_mlp, linear
from ..rng import Rng

ARCHETYPES = ("frozen_backbone", "mlp")


@dataclass(frozen=True)
class PreprocessSpec:
    levels: int = 255
    mean: tuple[float, ...] = (0.5,)
    std: tuple[float, ...] = (0.5,)
    resize: str = "identity"
    quantize: bool = True

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ValueError("mean and std need one entry per channel")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std entries must be positive, got {self.std}")
        if self.resize != "identity":
            raise ValueError("only the identity resize exists at 8x8")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")


def preprocess(x: T.Tensor, spec: PreprocessSpec) -> T.Tensor:
    """[-1, 1] image -> denormalize -> clamp -> 8-bit quantize -> normalize."""
    y = T.clamp01(T.shift(T.scale(x, 0.5), 0.5))
    if spec.quantize:
        y = T.round_straight_through(y, spec.levels)
    if len(set(spec.mean)) == 1 and len(set(spec.std)) == 1:
        return T.scale(T.shift(y, -spec.mean[0]), 1.0 / spec.std[0])
    c = y.shape[-3]
    if c != len(spec.mean):
        raise T.ShapeError(f"preprocess: {c} channels but {len(spec.mean)} normalization entries")
    hw = y.shape[-2:]
    neg_mean = T.Tensor(np.broadcast_to(-np.asarray(spec.mean)[:, None, None], (c, *hw)))
    inv_std = np.broadcast_to(1.0 / np.asarray(spec.std)[:, None, None], y.shape)
    return T.mul(T.add_bias(y, neg_mean), T.Tensor(inv_std))


@dataclass
class Detector:
    """Backbone MLP (``backbone.*``) followed by a linear head (``head.0``).

    ``frozen_backbone`` keeps the randomly initialised backbone fixed during
    standard training; ``mlp`` trains everything. ``adapters`` maps backbone
    layer names (``"backbone.<i>"``) to low-rank adapters.
    """

    detector_id: str
    archetype: str
    params: Params
    widths: tuple[int, ...]
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    adapters: dict = field(default_factory=dict)
    image_shape: tuple[int, ...] = (1, 8, 8)

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")

    @property
    def n_backbone(self) -> int:
        return len(self.widths) - 1

    def layer_names(self) -> list[str]:
        return [f"backbone.{i}" for i in range(self.n_backbone)]

    def backbone_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("backbone.")]

    def head_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("head.")]

    def with_params(self, params: Params, adapters: dict | None = None, detector_id: str | None = None):
        return replace(
            self,
            params=params,
            adapters=self.adapters if adapters is None else adapters,
            detector_id=detector_id or self.detector_id,
        )

    def frozen(self, detector_id: str | None = None) -> "Detector":
        """Copy with untracked parameters (and adapters)."""
        params = {k: T.Tensor(v.data.copy()) for k, v in self.params.items()}
        adapters = {k: a.frozen() for k, a in self.adapters.items()}
        return self.with_params(params, adapters, detector_id)


def smoothing_matrix(size: int, sigma: float) -> np.ndarray:
    """Row-normalised 1-D Gaussian blur over ``size`` samples."""
    i = np.arange(size)
    g = np.exp(-((i[:, None] - i[None, :]) ** 2) / (2.0 * sigma**2))
    return g / g.sum(axis=1, keepdims=True)


def smooth_filters(w: np.ndarray, image_shape: Sequence[int], sigma: float) -> np.ndarray:
    """Blur each input-layer filter spatially, keeping its norm.

    Columns of ``w`` are filters over the flattened image. Blurred filters
    respond to shapes and shading but barely to pixel-scale texture.
    """
    c, h, wd = image_shape
    f = w.T.reshape(-1, c, h, wd)
    f = np.einsum("ij,nojk,lk->noil", smoothing_matrix(h, sigma), f, smoothing_matrix(wd, sigma))
    out = f.reshape(w.shape[1], -1).T
    return out * (np.linalg.norm(w, axis=0) / np.linalg.norm(out, axis=0))


def init_detector(
    detector_id: str,
    rng: Rng,
    archetype: str = "frozen_backbone",
    widths: Sequence[int] = (64, 256, 128),
    preprocess_spec: PreprocessSpec | None = None,
    filter_smoothing: float = 0.0,
    image_shape: Sequence[int] = (1, 8, 8),
    smoothed_fraction: float = 1.0,
) -> Detector:
    """Random backbone plus a zero head.

    ``filter_smoothing > 0`` blurs the first-layer filters with a Gaussian of
    that width (in pixels), giving a frozen backbone tuned to image content
    rather than to low-level texture. Only the leading ``smoothed_fraction``
    of the filters is blurred; the rest keep their raw random weights.
    """
    params = init_mlp(rng, tuple(widths), "backbone")
    if filter_smoothing > 0:
        w = params["backbone.0.weight"]
        n = int(round(smoothed_fraction * w.shape[1]))
        w.data = np.concatenate([smooth_filters(w.data[:, :n], image_shape, filter_smoothing), w.data[:, n:]], axis=1)
    head = init_mlp(rng, (widths[-1], 1), "head", out_scale=0.0)
    params.update(head)
    d = Detector(detector_id, archetype, params, tuple(widths), preprocess_spec or PreprocessSpec(), image_shape=tuple(image_shape))
    return d.frozen()


def features(d: Detector, x: T.Tensor, training: bool = False, rng: Rng | None = None) -> T.Tensor:
    """Backbone activations for a batch of images (B, C, H, W) or one image."""
    if x.shape == tuple(d.image_shape):
        x = T.reshape(x, (1,) + tuple(d.image_shape))
    if x.shape[1:] != tuple(d.image_shape):
        raise T.ShapeError(f"detector expects images of shape {d.image_shape}, got {x.shape}")
    h = T.reshape(preprocess(x, d.preprocess), (x.shape[0], int(np.prod(d.image_shape))))
    for i in range(d.n_backbone):
        name = f"backbone.{i}"
        out = linear(h, d.params[f"{name}.weight"], d.params[f"{name}.bias"])
        if name in d.adapters:
            out = T.add(out, d.adapters[name].delta(h, training, rng))
        h = T.relu(out)
    return h


def forward(d: Detector, x: T.Tensor, training: bool = False, rng: Rng | None = None) -> T.Tensor:
    """Logits, shape (B, 1)."""
    h = features(d, x, training, rng)
    return linear(h, d.params["head.0.weight"], d.params["head.0.bias"])


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def predict(d: Detector, x) -> tuple[np.ndarray, np.ndarray]:
    """``(logit, probability)`` for one image or a batch; preprocessing included."""
    xt = x if isinstance(x, T.Tensor) else T.Tensor(x)
    single = xt.shape == tuple(d.image_shape)
    logits = forward(d, T.Tensor(xt.data)).data[:, 0]
    probs = _sigmoid(logits)
    if single:
        return logits[:1].copy(), probs[:1].copy()
    return logits, probs


def predict_batched(d: Detector, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = [predict(d, images[i : i + chunk])[0] for i in range(0, len(images), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def logistic(s: float) -> float:
    return 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))
