"""On-manifold adversarial fine-tuning with the growing adversarial weight."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..detector.data import LabeledSet, split_train_val
from ..detector.model import Detector
from ..detector.train import EvalReport, accuracy, evaluate, train_step, trainable_copy
from ..rng import Rng, seed_for
from .lora import apply_lora


def lambda_adv(epoch: int, base: float = 1.0, slope: float = 0.2, cap: float = 3.0) -> float:
    """Adversarial loss weight for a 1-based epoch: ``min(base + slope * epoch, cap)``."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    return min(base + slope * epoch, cap)


def checkpoint_score(val_acc: float, adv_acc: float, w_val: float = 0.6, w_adv: float = 0.4) -> float:
    for name, v in (("val_acc", val_acc), ("adv_acc", adv_acc)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return w_val * val_acc + w_adv * adv_acc


def parse_strategy(strategy: str) -> tuple[str, int | None]:
    """``"full"``, ``"head_only"`` or ``"lora(r)"`` / ``"lora:r"``."""
    s = strategy.strip().lower()
    if s in ("full", "head_only"):
        return s, None
    for open_, close in (("lora(", ")"), ("lora:", "")):
        if s.startswith(open_) and s.endswith(close):
            return "lora", int(s[len(open_) : len(s) - len(close)])
    raise ValueError(f"unknown strategy {strategy!r}")


@dataclass(frozen=True)
class OmatConfig:
    strategy: str = "lora(4)"
    epochs: int = 20
    weight_decay: float = 1e-4
    learning_rate: float | None = None
    batch_size: int | None = None
    lambda_base: float = 1.0
    lambda_slope: float = 0.2
    lambda_cap: float = 3.0
    w_val: float = 0.6
    w_adv: float = 0.4
    lora_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        parse_strategy(self.strategy)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lambda_cap < self.lambda_base:
            raise ValueError("lambda cap must be >= base")
        if abs(self.w_val + self.w_adv - 1.0) > 1e-12:
            raise ValueError("checkpoint weights must sum to 1")

    @property
    def kind(self) -> str:
        return parse_strategy(self.strategy)[0]

    @property
    def rank(self) -> int | None:
        return parse_strategy(self.strategy)[1]

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 2e-4 if self.kind == "lora" else 1e-4

    @property
    def batch(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 32 if self.kind == "lora" else 128


@dataclass
class OmatEpoch:
    epoch: int
    lambda_adv: float
    train_loss: float
    val_acc: float
    adv_acc: float
    score: float


@dataclass
class OmatResult:
    detector: Detector
    best_epoch: int
    history: list[OmatEpoch]
    checkpoints: list[Detector] = field(repr=False, default_factory=list)


def prepare(base: Detector, cfg: OmatConfig, rng: Rng) -> tuple[Detector, list[T.Tensor]]:
    kind = cfg.kind
    if kind == "full":
        return trainable_copy(base, list(base.params))
    if kind == "head_only":
        return trainable_copy(base, base.head_keys())
    d = apply_lora(base, None, cfg.rank, rng, dropout=cfg.lora_dropout)
    return trainable_copy(d, d.head_keys(), adapters=True)


def omat_train(base: Detector, std: LabeledSet, x_adv: LabeledSet, cfg: OmatConfig, val_salt: int = 0) -> OmatResult:
    """Fine-tune ``base`` on standard data plus ``x_adv`` (weighted by lambda_adv).

    Standard batches and adversarial batches alternate 1:1 until the
    adversarial set is used up for the epoch. The checkpoint with the best
    ``checkpoint_score(val_acc, adv_acc)`` is returned (earliest on ties).
    """
    if any(p != "adv" for p in x_adv.provenance):
        raise ValueError("x_adv must contain only adversarial items")
    rng = Rng(seed_for(cfg.seed, f"omat/{cfg.strategy}"))
    train, val = split_train_val(std, salt=val_salt)
    work, plist = prepare(base, cfg, rng)
    opt = T.adamw(cfg.lr, weight_decay=cfg.weight_decay)
    history: list[OmatEpoch] = []
    checkpoints: list[Detector] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        lam = lambda_adv(epoch, cfg.lambda_base, cfg.lambda_slope, cfg.lambda_cap)
        order = rng.permutation(len(train))
        adv_order = rng.permutation(len(x_adv)) if len(x_adv) else np.zeros(0, dtype=np.int64)
        std_batches = [order[i : i + cfg.batch] for i in range(0, len(order), cfg.batch)]
        adv_batches = [adv_order[i : i + cfg.batch] for i in range(0, len(adv_order), cfg.batch)]
        losses = []
        for j, idx in enumerate(std_batches):
            losses.append(
                train_step(work, plist, opt, train.images[idx], train.labels[idx], rng=rng, step=step)
            )
            step += 1
            if j < len(adv_batches):
                aidx = adv_batches[j]
                w = np.full(len(aidx), lam)
                losses.append(
                    train_step(work, plist, opt, x_adv.images[aidx], x_adv.labels[aidx], w, rng=rng, step=step)
                )
                step += 1
        snap = work.frozen(detector_id=f"{base.detector_id}+omat-{cfg.strategy}")
        val_acc = accuracy(snap, val)
        adv_acc = accuracy(snap, x_adv) if len(x_adv) else 0.0
        history.append(
            OmatEpoch(epoch, lam, float(np.mean(losses)), val_acc, adv_acc, checkpoint_score(val_acc, adv_acc, cfg.w_val, cfg.w_adv))
        )
        checkpoints.append(snap)
    best = int(np.argmax([h.score for h in history]))
    return OmatResult(checkpoints[best], best + 1, history, checkpoints)


@dataclass
class SweepRow:
    strategy: str
    report: EvalReport
    deltas: dict[str, float]
    avg_delta: float
    best_epoch: int


@dataclass
class SweepReport:
    base: EvalReport
    rows: list[SweepRow]
    results: dict[str, OmatResult] = field(repr=False, default_factory=dict)

    def table(self) -> list[dict]:
        """Rows formatted like ``94.63 (+15.43)`` per set, base row first."""
        out = [{"model": "base", **{k: f"{100 * m.acc:.2f}" for k, m in self.base.sets.items()}, "AVG": f"{100 * self.base.avg:.2f}"}]
        for r in self.rows:
            cells = {k: f"{100 * m.acc:.2f} ({100 * r.deltas[k]:+.2f})" for k, m in r.report.sets.items()}
            out.append({"model": r.strategy, **cells, "AVG": f"{100 * r.report.avg:.2f} ({100 * r.avg_delta:+.2f})"})
        return out


def strategy_sweep(
    base: Detector,
    std: LabeledSet,
    x_adv: LabeledSet,
    strategies: Sequence[str],
    eval_sets: dict[str, LabeledSet],
    cfg: OmatConfig | None = None,
    val_salt: int = 0,
) -> SweepReport:
    if not strategies:
        raise ValueError("strategy_sweep needs at least one strategy")
    cfg = cfg or OmatConfig()
    base_rep = evaluate(base, eval_sets)
    rows, results = [], {}
    for s in strategies:
        run_cfg = replace(cfg, strategy=s)
        res = omat_train(base, std, x_adv, run_cfg, val_salt)
        rep = evaluate(res.detector, eval_sets)
        deltas = {k: rep.sets[k].acc - base_rep.sets[k].acc for k in rep.sets}
        rows.append(SweepRow(s, rep, deltas, rep.avg - base_rep.avg, res.best_epoch))
        results[s] = res
    return SweepReport(base_rep, rows, results)
