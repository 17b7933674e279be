"""The seen generator plus unseen variants, each changing one design axis."""

from __future__ import annotations

from dataclasses import replace

from ..rng import seed_for
from .data import ToyDatasetSpec
from .generator import DenoiserTrainConfig, Generator, skeleton, train_denoiser, train_oneshot

SEEN = "seen"
UNSEEN_IDS = ("cosine", "deep", "steps25", "nearest", "oneshot")


def _trainer(seed: int, spec: ToyDatasetSpec | None, train_cfg: DenoiserTrainConfig | None):
    spec = spec or ToyDatasetSpec(seed=seed_for(seed, "dataset"))
    cfg = replace(train_cfg or DenoiserTrainConfig(), seed=seed_for(seed, "zoo"))

    def trained(gid, **axes):
        g, _ = train_denoiser(spec, skeleton(gid, seed_for(seed, f"init/{gid}"), **axes), cfg)
        return g

    return spec, cfg, trained


def train_seen_generator(
    seed: int,
    spec: ToyDatasetSpec | None = None,
    train_cfg: DenoiserTrainConfig | None = None,
) -> Generator:
    """The training-distribution generator: linear schedule, widths 128x128, 10 DDIM steps, bilinear decoder."""
    return _trainer(seed, spec, train_cfg)[2](SEEN)


def build_generator_zoo(
    seed: int,
    spec: ToyDatasetSpec | None = None,
    train_cfg: DenoiserTrainConfig | None = None,
    seen: Generator | None = None,
) -> list[Generator]:
    """Train and return ``[seen, cosine, deep, steps25, nearest, oneshot]``.

    ``steps25`` reuses the seen denoiser and only changes the DDIM step
    count; every other member is trained from its own initialisation.
    A previously trained ``seen`` generator may be passed in.
    """
    spec, cfg, trained = _trainer(seed, spec, train_cfg)
    seen = seen or trained(SEEN)
    zoo = [
        seen,
        trained("cosine", schedule_kind="cosine"),
        trained("deep", widths=(64, 64, 64)),
        Generator(
            generator_id="steps25",
            params=seen.params,
            widths=seen.widths,
            schedule=seen.schedule,
            decoder=seen.decoder,
            decoder_kind=seen.decoder_kind,
            inference_steps=25,
            n_classes=seen.n_classes,
        ),
        trained("nearest", decoder_kind="nearest"),
    ]
    oneshot, _ = train_oneshot(spec, "oneshot", cfg)
    zoo.append(oneshot)
    return zoo
