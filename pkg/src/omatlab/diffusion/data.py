"""Procedural 8x8 "real" images: one parametric shape family per class.

Classes 0-3 are oriented bars, 4-6 discs of growing radius and 7-9 checker
cells of growing size. Each sample jitters position, contrast and
background, then adds i.i.d. pixel noise. A sample is a pure function of
``(class, index, seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..rng import Rng, seed_for

_BAR_ANGLES = (0.0, 45.0, 90.0, 135.0)
_DISC_RADII = (1.6, 2.4, 3.2)
_CHECKER_CELLS = (2.0, 3.0, 4.0)


@dataclass(frozen=True)
class ToyDatasetSpec:
    n_classes: int = 10
    image_shape: tuple[int, int, int] = (1, 8, 8)
    pixel_noise: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.n_classes > 10:
            raise ValueError("toy dataset supports 1..10 classes")
        if self.image_shape[0] != 1:
            raise ValueError("toy images are single-channel")


def _grid(h: int, w: int):
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    return ys - h / 2.0, xs - w / 2.0


def _soft(v: np.ndarray, sharp: float = 2.5) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-sharp * v))


def class_shape(cls: int, h: int, w: int, dy: float, dx: float, extra: float) -> np.ndarray:
    """Foreground mask in [0, 1] for ``cls`` shifted by (dy, dx)."""
    ys, xs = _grid(h, w)
    ys, xs = ys - dy, xs - dx
    if cls < 4:
        a = math.radians(_BAR_ANGLES[cls] + 10.0 * extra)
        dist = np.abs(-math.sin(a) * xs + math.cos(a) * ys)
        return _soft(1.1 - dist)
    if cls < 7:
        r = _DISC_RADII[cls - 4] * (1.0 + 0.1 * extra)
        return _soft(r - np.sqrt(ys**2 + xs**2))
    cell = _CHECKER_CELLS[cls - 7]
    phase = np.sin(math.pi * ys / cell) * np.sin(math.pi * xs / cell)
    return _soft(3.0 * phase, sharp=1.5)


def real_image(spec: ToyDatasetSpec, cls: int, index: int) -> np.ndarray:
    if not 0 <= cls < spec.n_classes:
        raise ValueError(f"class {cls} outside [0, {spec.n_classes})")
    rng = Rng(seed_for(spec.seed, f"real/{cls}/{index}"))
    _, h, w = spec.image_shape
    u = rng.uniforms(5)
    dy, dx = (u[0] - 0.5) * 1.5, (u[1] - 0.5) * 1.5
    extra = 2.0 * u[2] - 1.0
    contrast = 1.1 + 0.5 * u[3]
    background = -0.6 + 0.3 * u[4]
    mask = class_shape(cls, h, w, dy, dx, extra)
    img = background + contrast * mask + rng.normal((h, w), std=spec.pixel_noise)
    return np.clip(img, -0.98, 0.98).reshape(spec.image_shape)


def real_images(spec: ToyDatasetSpec, classes, per_class: int, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``per_class`` samples (indices ``start..``) for each class."""
    imgs, labels = [], []
    for c in classes:
        for i in range(start, start + per_class):
            imgs.append(real_image(spec, c, i))
            labels.append(c)
    return np.stack(imgs), np.array(labels, dtype=np.int64)


def class_templates(spec: ToyDatasetSpec, per_class: int = 64) -> np.ndarray:
    """Empirical per-class mean image, shape (C,) + image_shape."""
    out = []
    for c in range(spec.n_classes):
        x, _ = real_images(spec, [c], per_class, start=1_000_000)
        out.append(x.mean(axis=0))
    return np.stack(out)
