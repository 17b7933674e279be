"""Standard detector training (BCE on real vs fake) and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..diffusion.generator import TrainingDiverged
from ..rng import Rng, seed_for
from .data import LabeledSet, split_train_val
from .model import Detector, PreprocessSpec, forward, init_detector, predict_batched


@dataclass(frozen=True)
class DetectorTrainConfig:
    archetype: str = "frozen_backbone"
    widths: tuple[int, ...] = (64, 256, 128)
    epochs: int = 30
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    seed: int = 0
    detector_id: str = "baseline"
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    filter_smoothing: float = 0.0
    smoothed_fraction: float = 1.0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


def accuracy(d: Detector, data: LabeledSet) -> float:
    if len(data) == 0:
        return float("nan")
    pred = (predict_batched(d, data.images) >= 0.0).astype(np.int64)
    return float(np.mean(pred == data.labels))


def trainable_copy(d: Detector, keys, adapters: bool = False) -> tuple[Detector, list[T.Tensor]]:
    """Working copy whose ``keys`` (and optionally adapter matrices) are tracked leaves."""
    keys = set(keys)
    params = {k: T.Tensor(v.data.copy(), requires_grad=k in keys) for k, v in d.params.items()}
    ads = {k: a.trainable() if adapters else a.frozen() for k, a in d.adapters.items()}
    work = d.with_params(params, ads)
    plist = [params[k] for k in params if k in keys]
    if adapters:
        for a in ads.values():
            plist.extend(a.parameters())
    return work, plist


def train_step(work, plist, opt, images, labels, weights=None, rng=None, step=0) -> float:
    logits = forward(work, T.Tensor(images), training=True, rng=rng)
    loss = T.bce_with_logits(logits, labels[:, None], None if weights is None else weights[:, None])
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDiverged(step)
    T.optimizer_step(opt, plist, T.backward(loss))
    return value


def train_detector(real: LabeledSet, fake: LabeledSet, cfg: DetectorTrainConfig, init: Detector | None = None):
    """Minimize BCE over shuffled mixed batches; returns ``(detector, history)``.

    The validation split is the deterministic index-hash split of the
    combined set; history has one :class:`EpochRecord` per epoch.
    """
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("train_detector needs non-empty real and fake sets")
    rng = Rng(seed_for(cfg.seed, f"detector/{cfg.detector_id}"))
    d = init or init_detector(cfg.detector_id, rng, cfg.archetype, cfg.widths, cfg.preprocess, cfg.filter_smoothing, smoothed_fraction=cfg.smoothed_fraction)
    train, val = split_train_val(real.concat(fake), salt=cfg.seed)
    keys = d.head_keys() if d.archetype == "frozen_backbone" else list(d.params)
    work, plist = trainable_copy(d, keys)
    opt = T.adamw(cfg.learning_rate, weight_decay=cfg.weight_decay)
    history: list[EpochRecord] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            losses.append(train_step(work, plist, opt, train.images[idx], train.labels[idx], step=step))
            step += 1
        snap = work.frozen()
        history.append(
            EpochRecord(epoch, float(np.mean(losses)), accuracy(snap, train), accuracy(snap, val))
        )
    return work.frozen(), history


@dataclass
class SetMetrics:
    acc: float
    fake_acc: float | None
    real_acc: float | None
    n_fake: int
    n_real: int


@dataclass
class EvalReport:
    sets: dict[str, SetMetrics]
    avg: float

    def to_dict(self) -> dict:
        return {
            "sets": {
                k: {"acc": m.acc, "fake_acc": m.fake_acc, "real_acc": m.real_acc, "n_fake": m.n_fake, "n_real": m.n_real}
                for k, m in self.sets.items()
            },
            "avg": self.avg,
        }


def evaluate(d: Detector, sets: dict[str, LabeledSet], threshold: float = 0.5) -> EvalReport:
    """Accuracy at ``threshold`` per set, split into fake/real, plus the mean over sets."""
    cut = math.log(threshold / (1.0 - threshold))
    out = {}
    for name, data in sets.items():
        if len(data) == 0:
            raise ValueError(f"evaluation set {name!r} is empty")
        pred = (predict_batched(d, data.images) >= cut).astype(np.int64)
        hit = pred == data.labels
        fk, rl = data.labels == 1, data.labels == 0
        out[name] = SetMetrics(
            acc=float(hit.mean()),
            fake_acc=float(hit[fk].mean()) if fk.any() else None,
            real_acc=float(hit[rl].mean()) if rl.any() else None,
            n_fake=int(fk.sum()),
            n_real=int(rl.sum()),
        )
    return EvalReport(out, float(np.mean([m.acc for m in out.values()])))
