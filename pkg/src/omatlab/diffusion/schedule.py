"""Noise schedules, the forward q-sample, and the deterministic DDIM update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tensor as T


@dataclass(frozen=True)
class NoiseSchedule:
    T_train: int
    kind: str
    betas: np.ndarray  # betas[t-1] is beta_t, t = 1..T
    alpha_bar: np.ndarray  # alpha_bar[0] = 1, length T + 1

    def abar(self, t: int) -> float:
        if not 0 <= t <= self.T_train:
            raise ValueError(f"timestep {t} outside [0, {self.T_train}]")
        return float(self.alpha_bar[t])


def _cumulative(betas: np.ndarray) -> np.ndarray:
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def make_schedule(kind: str = "linear", T_train: int = 100) -> NoiseSchedule:
    if T_train < 2:
        raise ValueError(f"T_train must be >= 2, got {T_train}")
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, T_train)
    elif kind == "cosine":
        s = 0.008
        t = np.arange(T_train + 1) / T_train
        f = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-12, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(T_train, kind, betas, _cumulative(betas))


def forward_diffuse(z0: T.Tensor, t: int, eps: T.Tensor, schedule: NoiseSchedule) -> T.Tensor:
    """``sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps``."""
    if eps.shape != z0.shape:
        raise T.ShapeError(f"forward_diffuse: eps {eps.shape} vs z0 {z0.shape}")
    a = schedule.abar(t)
    return T.add(T.scale(z0, math.sqrt(a)), T.scale(eps, math.sqrt(1.0 - a)))


def ddim_update(z_t: T.Tensor, eps: T.Tensor, abar_t: float, abar_prev: float) -> T.Tensor:
    """One eta=0 DDIM move given the two cumulative coefficients."""
    if eps.shape != z_t.shape:
        raise T.ShapeError(f"ddim_step: eps {eps.shape} vs z_t {z_t.shape}")
    sa_t, sa_p = math.sqrt(abar_t), math.sqrt(abar_prev)
    x0_hat = T.scale(T.sub(z_t, T.scale(eps, math.sqrt(1.0 - abar_t))), 1.0 / sa_t)
    return T.add(T.scale(x0_hat, sa_p), T.scale(eps, math.sqrt(1.0 - abar_prev)))


def ddim_step(z_t: T.Tensor, eps: T.Tensor, t: int, t_prev: int, schedule: NoiseSchedule) -> T.Tensor:
    if t_prev >= t:
        raise ValueError(f"ddim_step needs t_prev < t, got t={t}, t_prev={t_prev}")
    if t_prev < 0:
        raise ValueError(f"t_prev must be >= 0, got {t_prev}")
    return ddim_update(z_t, eps, schedule.abar(t), schedule.abar(t_prev))


def inference_timesteps(T_train: int, steps: int) -> list[int]:
    """Evenly spaced descending timesteps ending at 0 (``steps + 1`` entries).

    Leading spacing: ``T/steps * k + 1`` for ``k = steps-1 .. 0``, then 0, so
    ``steps == T_train`` visits every training timestep ``T .. 1``.
    """
    if not 1 <= steps <= T_train:
        raise ValueError(f"inference steps must be in [1, {T_train}], got {steps}")
    return [(T_train * (steps - 1 - i)) // steps + 1 for i in range(steps)] + [0]
