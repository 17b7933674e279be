"""On-manifold attack: SGD on the initial latent noise to fool a detector."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..detector.model import Detector, forward
from ..diffusion.generator import Generator, sample
from ..rng import Rng


class NonFiniteGradient(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"latent gradient became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class LatentAttackConfig:
    max_steps: int = 100
    learning_rate: float = 1e-3
    success_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 < self.success_threshold < 1.0:
            raise ValueError("success_threshold must lie in (0, 1)")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class AttackOutcome:
    seed: int
    cls: int
    success: bool
    steps_used: int
    z_init: np.ndarray
    z_adv: np.ndarray | None
    final_image: np.ndarray
    logits: list[float] = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def final_logit(self) -> float:
        return self.logits[-1]


def initial_latent(gen: Generator, seed: int) -> np.ndarray:
    """The seed's starting point: standard normals from xoshiro256** / Box-Muller."""
    return Rng(seed).normal(gen.latent_shape)


def detector_logit(gen: Generator, d: Detector, z, c: int) -> T.Tensor:
    return forward(d, sample(gen, z, c))


def latent_attack(gen: Generator, d: Detector, c: int, cfg: LatentAttackConfig) -> AttackOutcome:
    """Run one attack attempt.

    Each iteration generates, scores, and checks ``sigmoid(logit) < tau``
    *before* updating, so an already-fooling start succeeds at step 0.
    ``steps_used`` is the number of SGD updates applied.
    """
    if tuple(d.image_shape) != tuple(gen.image_shape):
        raise T.ShapeError(f"detector {d.image_shape} and generator {gen.image_shape} disagree")
    start = time.perf_counter()
    z0 = initial_latent(gen, cfg.seed)
    z = z0.copy()
    logits: list[float] = []
    cut = math.log(cfg.success_threshold / (1.0 - cfg.success_threshold))
    image = None
    for k in range(cfg.max_steps):
        zt = T.Tensor(z, requires_grad=True)
        x = sample(gen, zt, c)
        s = forward(d, x)
        logits.append(s.item())
        if s.item() < cut:
            return AttackOutcome(
                cfg.seed, c, True, k, z0, z.copy(), x.data.copy(), logits, time.perf_counter() - start
            )
        g = T.backward(T.bce_with_logits(s, 0.0))[zt].data
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(k)
        z = z - cfg.learning_rate * g
        image = x.data
    # the last update is never scored; report the image of the final scored latent
    return AttackOutcome(
        cfg.seed, c, False, cfg.max_steps, z0, None, image.copy(), logits, time.perf_counter() - start
    )


def verify_outcome(gen: Generator, d: Detector, outcome: AttackOutcome, threshold: float = 0.5) -> bool:
    """Re-generate from the stored latent and re-check the success condition."""
    if not outcome.success:
        return False
    s = detector_logit(gen, d, outcome.z_adv, outcome.cls).item()
    return s < math.log(threshold / (1.0 - threshold))
