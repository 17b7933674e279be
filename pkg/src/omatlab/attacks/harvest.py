"""Collecting on-manifold adversarial sets and re-attack robustness."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..detector.data import LabeledSet
from ..detector.model import Detector
from ..diffusion.generator import Generator
from .latent import AttackOutcome, LatentAttackConfig, latent_attack

REATTACK_SEED_BASE = 1_000_000


class SeedBudgetExhausted(RuntimeError):
    def __init__(self, cls: int, found: int, needed: int, budget: int):
        super().__init__(f"class {cls}: {found}/{needed} successes within a budget of {budget} seeds")
        self.cls = cls


@dataclass
class ManifestRow:
    cls: int
    seed: int
    steps: int
    logit_final: float


@dataclass
class AdvDataset:
    data: LabeledSet
    manifest: list[ManifestRow]
    outcomes: list[AttackOutcome]
    attempts: list[AttackOutcome]

    @property
    def latents(self) -> np.ndarray:
        return np.stack([o.z_adv for o in self.outcomes])


def harvest_adv_dataset(
    gen: Generator,
    d: Detector,
    classes: Sequence[int],
    per_class: int,
    cfg: LatentAttackConfig,
    budget_factor: int = 50,
) -> AdvDataset:
    """Attack seeds ``cfg.seed, cfg.seed+1, ...`` per class until ``per_class`` succeed."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    budget = budget_factor * per_class
    images, manifest, wins, attempts = [], [], [], []
    for c in classes:
        found = 0
        for i in range(budget):
            o = latent_attack(gen, d, c, replace(cfg, seed=cfg.seed + i))
            attempts.append(o)
            if o.success:
                images.append(o.final_image.reshape(gen.image_shape))
                manifest.append(ManifestRow(c, o.seed, o.steps_used, o.final_logit))
                wins.append(o)
                found += 1
                if found == per_class:
                    break
        if found < per_class:
            raise SeedBudgetExhausted(c, found, per_class, budget)
    return AdvDataset(LabeledSet.adversarial(np.stack(images)), manifest, wins, attempts)


@dataclass
class RobustnessReport:
    detector_id: str
    attempts: int
    successes: int
    success_pct: float
    avg_step: float | None
    max_steps: int
    outcomes: list[AttackOutcome]

    def to_dict(self) -> dict:
        return {
            "detector_id": self.detector_id,
            "attempts": self.attempts,
            "successes": self.successes,
            "success_pct": self.success_pct,
            "avg_step": self.avg_step,
            "max_steps": self.max_steps,
        }


def reattack_eval(
    d: Detector,
    gen: Generator,
    classes: Sequence[int],
    seeds_per_class: int,
    cfg: LatentAttackConfig,
) -> RobustnessReport:
    """Attack fresh seeds ``cfg.seed + i`` for every class; success % and mean steps of successes."""
    outcomes = [
        latent_attack(gen, d, c, replace(cfg, seed=cfg.seed + i)) for c in classes for i in range(seeds_per_class)
    ]
    wins = [o.steps_used for o in outcomes if o.success]
    return RobustnessReport(
        d.detector_id,
        len(outcomes),
        len(wins),
        100.0 * len(wins) / len(outcomes) if outcomes else 0.0,
        float(np.mean(wins)) if wins else None,
        cfg.max_steps,
        outcomes,
    )


def step_histogram(outcomes: Sequence[AttackOutcome], max_steps: int, bin_width: int = 5) -> list[tuple[int, int, int]]:
    """``(lo, hi, count)`` bins over steps of successful outcomes; ``hi`` exclusive."""
    edges = list(range(0, max_steps + bin_width, bin_width))
    steps = np.array([o.steps_used for o in outcomes if o.success], dtype=np.int64)
    return [(lo, hi, int(np.sum((steps >= lo) & (steps < hi)))) for lo, hi in zip(edges[:-1], edges[1:])]
