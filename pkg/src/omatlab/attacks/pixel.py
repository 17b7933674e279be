"""L-infinity pixel-space baselines (FGSM, PGD, MI-FGSM), targeted at "real".

All three descend ``BCE(D(P(x)), 0)`` on the decoded image (range [-1, 1])
with gradients taken through the preprocessing chain. PGD and MI-FGSM start
from the clean image (no random start).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..detector.model import Detector, forward

IMAGE_MIN, IMAGE_MAX = -1.0, 1.0


@dataclass(frozen=True)
class PixelAttackConfig:
    kind: str = "fgsm"  # fgsm | pgd | mifgsm
    epsilon: float = 0.03
    step_size: float = 0.0
    iterations: int = 1
    momentum: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd", "mifgsm"):
            raise ValueError(f"unknown pixel attack {self.kind!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.kind != "fgsm" and (self.step_size <= 0 or self.iterations < 1):
            raise ValueError(f"{self.kind} needs step_size > 0 and iterations >= 1")

    @property
    def label(self) -> str:
        if self.kind == "fgsm":
            return f"FGSM(eps={self.epsilon:g})"
        name = "PGD" if self.kind == "pgd" else "MI-FGSM"
        return f"{name}(eps={self.epsilon:g},alpha={self.step_size:g},T={self.iterations})"


# the nine rows of the pixel-space ablation grid
PIXEL_GRID = (
    PixelAttackConfig("fgsm", 0.03),
    PixelAttackConfig("fgsm", 0.05),
    PixelAttackConfig("fgsm", 0.1),
    PixelAttackConfig("pgd", 0.03, 0.005, 20),
    PixelAttackConfig("pgd", 0.05, 0.01, 20),
    PixelAttackConfig("pgd", 0.1, 0.02, 40),
    PixelAttackConfig("mifgsm", 0.03, 0.005, 20),
    PixelAttackConfig("mifgsm", 0.05, 0.01, 20),
    PixelAttackConfig("mifgsm", 0.1, 0.015, 30),
)


def input_gradient(d: Detector, x: np.ndarray, y_target: float = 0.0) -> np.ndarray:
    """Per-image gradient of ``BCE(D(P(x)), y_target)`` w.r.t. the image batch."""
    xt = T.Tensor(x, requires_grad=True)
    loss = T.bce_with_logits(forward(d, xt), y_target, reduction="sum")
    gm = T.backward(loss)
    return gm[xt].data if xt in gm else np.zeros_like(x)


def _project(x_adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(np.clip(x_adv, x - eps, x + eps), IMAGE_MIN, IMAGE_MAX)


def pixel_attack(d: Detector, x: np.ndarray, cfg: PixelAttackConfig, y_target: float = 0.0) -> np.ndarray:
    """Adversarial copy of an image (or batch) with ``|x' - x|_inf <= epsilon``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == tuple(d.image_shape)
    xb = x[None] if single else x
    if cfg.kind == "fgsm":
        out = _project(xb - cfg.epsilon * np.sign(input_gradient(d, xb, y_target)), xb, cfg.epsilon)
    else:
        out = xb.copy()
        velocity = np.zeros_like(xb)
        for _ in range(cfg.iterations):
            g = input_gradient(d, out, y_target)
            if cfg.kind == "mifgsm":
                l1 = np.abs(g).reshape(len(g), -1).sum(axis=1).reshape((-1,) + (1,) * (g.ndim - 1))
                velocity = cfg.momentum * velocity + g / np.where(l1 > 0, l1, 1.0)
                g = velocity
            out = _project(out - cfg.step_size * np.sign(g), xb, cfg.epsilon)
    return out[0] if single else out


def pixel_attack_batched(d: Detector, images: np.ndarray, cfg: PixelAttackConfig, chunk: int = 256) -> np.ndarray:
    return np.concatenate([pixel_attack(d, images[i : i + chunk], cfg) for i in range(0, len(images), chunk)])
