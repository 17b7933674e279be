"""Conditional latent-diffusion generator, its sampler, and denoiser training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..nn import Params, init_mlp, mlp_forward, mse
from ..rng import Rng, seed_for
from .data import ToyDatasetSpec, class_templates, real_images
from .decoders import decoder_matrix, encode
from .schedule import NoiseSchedule, ddim_step, inference_timesteps, make_schedule

TEMB_DIM = 16


def time_embedding(t: int, dim: int = TEMB_DIM) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(1000.0) * np.arange(half) / half)
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])


def one_hot(classes: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(classes), n))
    out[np.arange(len(classes)), classes] = 1.0
    return out


@dataclass
class Generator:
    """Deterministic map ``(z_T, class) -> image in [-1, 1]``.

    ``kind == "diffusion"`` runs DDIM over ``schedule`` with the MLP
    denoiser, then decodes with ``tanh(D z0)``. ``kind == "oneshot"`` replaces
    the DDIM loop by a single MLP ``(z, class) -> z0``; decoding is shared.
    """

    generator_id: str
    params: Params
    widths: tuple[int, ...]
    schedule: NoiseSchedule | None = None
    decoder: np.ndarray | None = None
    decoder_kind: str = "bilinear"
    inference_steps: int = 10
    kind: str = "diffusion"
    n_classes: int = 10
    latent_shape: tuple[int, ...] = (1, 4, 4)
    image_shape: tuple[int, ...] = (1, 8, 8)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for p in self.params.values():
            p.requires_grad = False
            p.node_id = None
        if self.decoder is None or self.decoder.shape != (self.image_size, self.latent_size):
            raise ValueError("decoder must be a (image_size, latent_size) matrix")
        if self.kind == "diffusion":
            if self.schedule is None:
                raise ValueError("diffusion generator needs a schedule")
            inference_timesteps(self.schedule.T_train, self.inference_steps)
        elif self.kind != "oneshot":
            raise ValueError(f"unknown generator kind {self.kind!r}")

    @property
    def latent_size(self) -> int:
        return int(np.prod(self.latent_shape))

    @property
    def image_size(self) -> int:
        return int(np.prod(self.image_shape))

    def timesteps(self) -> list[int]:
        return inference_timesteps(self.schedule.T_train, self.inference_steps)

    def _decoder_t(self) -> T.Tensor:
        if "dec" not in self._cache:
            self._cache["dec"] = T.Tensor(self.decoder.T.copy())
        return self._cache["dec"]

    def _temb(self, t: int, batch: int) -> T.Tensor:
        key = ("temb", t, batch)
        if key not in self._cache:
            self._cache[key] = T.Tensor(np.tile(time_embedding(t), (batch, 1)))
        return self._cache[key]


def _as_latent_batch(gen: Generator, z_T) -> tuple[T.Tensor, bool]:
    z = z_T if isinstance(z_T, T.Tensor) else T.Tensor(z_T)
    if z.shape == gen.latent_shape:
        return T.reshape(z, (1, gen.latent_size)), False
    if z.shape[1:] == gen.latent_shape:
        return T.reshape(z, (z.shape[0], gen.latent_size)), True
    raise T.ShapeError(f"z_T shape {z.shape} does not match latent shape {gen.latent_shape}")


def denoise(gen: Generator, z: T.Tensor, t: int, cond: T.Tensor) -> T.Tensor:
    inp = T.concat([z, gen._temb(t, z.shape[0]), cond], axis=1)
    return mlp_forward(gen.params, "denoiser", inp)


def sample(gen: Generator, z_T, c) -> T.Tensor:
    """Generate images from ``z_T`` (one latent or a batch) and class id(s).

    Differentiable end to end in ``z_T`` when it is a tracked tensor.
    """
    z, batched = _as_latent_batch(gen, z_T)
    b = z.shape[0]
    classes = np.broadcast_to(np.asarray(c, dtype=np.int64), (b,))
    if np.any(classes < 0) or np.any(classes >= gen.n_classes):
        raise ValueError(f"class id(s) {np.unique(classes)} outside [0, {gen.n_classes})")
    cond = T.Tensor(one_hot(classes, gen.n_classes))
    if gen.kind == "oneshot":
        z = mlp_forward(gen.params, "oneshot", T.concat([z, cond], axis=1))
    else:
        ts = gen.timesteps()
        for t, t_prev in zip(ts[:-1], ts[1:]):
            z = ddim_step(z, denoise(gen, z, t, cond), t, t_prev, gen.schedule)
    pre = T.matmul(z, gen._decoder_t())
    x = T.tanh(pre)
    shape = (b,) + tuple(gen.image_shape) if batched else tuple(gen.image_shape)
    return T.reshape(x, shape)


def sample_images(gen: Generator, z_T: np.ndarray, classes, chunk: int = 256) -> np.ndarray:
    """Untracked batch sampling, returned as a numpy array."""
    out = []
    classes = np.broadcast_to(np.asarray(classes), (len(z_T),))
    for i in range(0, len(z_T), chunk):
        out.append(sample(gen, T.Tensor(z_T[i : i + chunk]), classes[i : i + chunk]).data)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class DenoiserTrainConfig:
    steps: int = 3000
    batch_size: int = 128
    learning_rate: float = 2e-3
    weight_decay: float = 0.0
    per_class: int = 200
    seed: int = 0


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"{what} became non-finite at step {step}")
        self.step = step


def skeleton(
    generator_id: str,
    rng_seed: int,
    widths: Sequence[int] = (128, 128),
    schedule_kind: str = "linear",
    T_train: int = 100,
    decoder_kind: str = "bilinear",
    inference_steps: int = 10,
    n_classes: int = 10,
) -> Generator:
    """Randomly initialised diffusion generator."""
    latent = 16
    full = (latent + TEMB_DIM + n_classes, *widths, latent)
    params = init_mlp(Rng(rng_seed), full, "denoiser", out_scale=0.1)
    return Generator(
        generator_id=generator_id,
        params=params,
        widths=tuple(widths),
        schedule=make_schedule(schedule_kind, T_train),
        decoder=decoder_matrix(decoder_kind),
        decoder_kind=decoder_kind,
        inference_steps=inference_steps,
        n_classes=n_classes,
    )


def training_latents(spec: ToyDatasetSpec, decoder: np.ndarray, per_class: int):
    x, y = real_images(spec, range(spec.n_classes), per_class)
    return encode(decoder, x), y


def train_denoiser(spec: ToyDatasetSpec, gen: Generator, cfg: DenoiserTrainConfig):
    """Fit the epsilon-prediction MSE; returns ``(generator, loss_history)``.

    The returned generator shares everything with ``gen`` except freshly
    trained denoiser parameters.
    """
    z0_all, y_all = training_latents(spec, gen.decoder, cfg.per_class)
    params = {k: T.Tensor(v.data.copy(), requires_grad=True) for k, v in gen.params.items()}
    plist = list(params.values())
    opt = T.adamw(cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = Rng(seed_for(cfg.seed, f"denoiser/{gen.generator_id}"))
    npg = rng.numpy_generator()
    sched = gen.schedule
    temb_table = np.stack([time_embedding(t) for t in range(sched.T_train + 1)])
    history = []
    for step in range(cfg.steps):
        idx = npg.integers(0, len(z0_all), cfg.batch_size)
        t = npg.integers(1, sched.T_train + 1, cfg.batch_size)
        eps = npg.standard_normal((cfg.batch_size, z0_all.shape[1]))
        a = sched.alpha_bar[t][:, None]
        z_t = np.sqrt(a) * z0_all[idx] + np.sqrt(1.0 - a) * eps
        inp = np.concatenate([z_t, temb_table[t], one_hot(y_all[idx], gen.n_classes)], axis=1)
        loss = mse(mlp_forward(params, "denoiser", T.Tensor(inp)), T.Tensor(eps))
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(step)
        history.append(loss.item())
        T.optimizer_step(opt, plist, T.backward(loss))
    trained = Generator(
        generator_id=gen.generator_id,
        params={k: T.Tensor(v.data) for k, v in params.items()},
        widths=gen.widths,
        schedule=gen.schedule,
        decoder=gen.decoder,
        decoder_kind=gen.decoder_kind,
        inference_steps=gen.inference_steps,
        n_classes=gen.n_classes,
    )
    return trained, history


def train_oneshot(spec: ToyDatasetSpec, generator_id: str, cfg: DenoiserTrainConfig, widths=(128, 128)):
    """Non-diffusion generator: one MLP pass from noise to latent, then the decoder.

    Each real image's latent is whitened per class and the MLP learns to
    map the whitened code back to the latent, so ``z ~ N(0, I)`` at sampling
    time lands on the data distribution without any denoising iterations.
    """
    dec = decoder_matrix("bilinear")
    lat, y = training_latents(spec, dec, cfg.per_class)
    codes = np.empty_like(lat)
    for c in range(spec.n_classes):
        m = y == c
        mu = lat[m].mean(axis=0)
        cov = np.cov(lat[m], rowvar=False) + 1e-4 * np.eye(lat.shape[1])
        codes[m] = np.linalg.solve(np.linalg.cholesky(cov), (lat[m] - mu).T).T
    rng = Rng(seed_for(cfg.seed, f"oneshot/{generator_id}"))
    params = init_mlp(rng, (lat.shape[1] + spec.n_classes, *widths, lat.shape[1]), "oneshot")
    plist = list(params.values())
    opt = T.adamw(cfg.learning_rate, weight_decay=cfg.weight_decay)
    npg = rng.numpy_generator()
    history = []
    for step in range(cfg.steps):
        idx = npg.integers(0, len(codes), cfg.batch_size)
        inp = np.concatenate([codes[idx], one_hot(y[idx], spec.n_classes)], axis=1)
        loss = mse(mlp_forward(params, "oneshot", T.Tensor(inp)), T.Tensor(lat[idx]))
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(step)
        history.append(loss.item())
        T.optimizer_step(opt, plist, T.backward(loss))
    gen = Generator(
        generator_id=generator_id,
        params={k: T.Tensor(v.data) for k, v in params.items()},
        widths=tuple(widths),
        decoder=dec,
        kind="oneshot",
        n_classes=spec.n_classes,
        inference_steps=1,
    )
    return gen, history


def template_correlation(gen: Generator, spec: ToyDatasetSpec, per_class: int = 32, seed: int = 0) -> float:
    """Mean over classes of the pixel correlation between the class mean of
    generated samples and the class mean of real samples."""
    templates = class_templates(spec)
    rng = Rng(seed_for(seed, f"template-check/{gen.generator_id}"))
    scores = []
    for c in range(gen.n_classes):
        z = rng.normal((per_class,) + tuple(gen.latent_shape))
        imgs = sample_images(gen, z, c)
        a = imgs.mean(axis=0).ravel()
        b = templates[c].ravel()
        scores.append(float(np.corrcoef(a, b)[0, 1]))
    return float(np.mean(scores))
