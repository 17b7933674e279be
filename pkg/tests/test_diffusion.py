import math

import numpy as np
import pytest

from omatlab import tensor as T
from omatlab.diffusion.data import ToyDatasetSpec, real_image, real_images
from omatlab.diffusion.decoders import decode_linear, decoder_matrix, encode, project_latent
from omatlab.diffusion.generator import (
    DenoiserTrainConfig,
    Generator,
    sample,
    sample_images,
    skeleton,
    template_correlation,
    train_denoiser,
    train_oneshot,
)
from omatlab.diffusion.schedule import NoiseSchedule, ddim_step, ddim_update, forward_diffuse, inference_timesteps, make_schedule
from omatlab.diffusion.zoo import SEEN, UNSEEN_IDS, build_generator_zoo
from omatlab.rng import Rng
from omatlab.tensor.gradcheck import check_gradients


def test_linear_schedule_two_steps():
    s = make_schedule("linear", 2)
    assert np.array_equal(s.betas, [1e-4, 0.02])
    assert np.allclose(s.alpha_bar, [1.0, 0.9999, 0.9999 * 0.98], rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind", ["linear", "cosine"])
@pytest.mark.parametrize("T_train", [2, 10, 100, 1000])
def test_schedules_are_valid(kind, T_train):
    s = make_schedule(kind, T_train)
    assert s.alpha_bar[0] == 1.0
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.betas > 0) & (s.betas <= 0.999))


def test_cosine_schedule_matches_formula():
    s = make_schedule("cosine", 100)
    f = lambda t: math.cos(((t / 100) + 0.008) / 1.008 * math.pi / 2) ** 2  # noqa: E731
    for t in (1, 10, 50, 99):
        assert s.alpha_bar[t] == pytest.approx(f(t) / f(0), rel=1e-12)
    assert s.alpha_bar[100] < s.alpha_bar[50] < 1


def test_schedule_errors():
    with pytest.raises(ValueError):
        make_schedule("linear", 1)
    with pytest.raises(ValueError):
        make_schedule("sqrt", 10)


def test_forward_diffuse_examples():
    s = make_schedule("linear", 10)
    z0, eps = T.Tensor([1.0, -2.0]), T.Tensor([0.5, 0.25])
    assert np.array_equal(forward_diffuse(z0, 0, eps, s).data, z0.data)
    a = s.abar(4)
    out = forward_diffuse(z0, 4, T.Tensor([0.0, 0.0]), s)
    assert np.allclose(out.data, math.sqrt(a) * z0.data, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        forward_diffuse(z0, 11, eps, s)


def test_forward_diffuse_hand_value():
    s = NoiseSchedule(1, "linear", np.array([0.75]), np.array([1.0, 0.25]))
    out = forward_diffuse(T.Tensor([1.0]), 1, T.Tensor([2.0]), s)
    assert out.item() == pytest.approx(2.2320508, abs=1e-7)


def test_ddim_closed_forms():
    z = T.Tensor([0.7, -1.3, 2.0])
    out = ddim_update(z, T.Tensor(np.zeros(3)), 0.25, 0.64)
    assert np.max(np.abs(out.data - 1.6 * z.data)) < 1e-12
    eps = T.Tensor([0.2, -0.4, 1.1])
    zt = T.scale(eps, math.sqrt(1 - 0.25))
    out = ddim_update(zt, eps, 0.25, 0.64)
    assert np.max(np.abs(out.data - math.sqrt(1 - 0.64) * eps.data)) < 1e-12


def test_ddim_hand_value():
    # 50-digit evaluation of the update: sqrt(.7) * (1 - sqrt(.5) * .5) / sqrt(.5) + sqrt(.3) * .5
    oracle = 1.0387472221054684619
    assert ddim_update(T.Tensor([1.0]), T.Tensor([0.5]), 0.5, 0.7).item() == pytest.approx(oracle, abs=1e-14)


def test_ddim_consistency_with_forward_process():
    s = make_schedule("linear", 100)
    g = np.random.default_rng(0)
    for _ in range(100):
        t = int(g.integers(1, 101))
        tp = int(g.integers(0, t))
        z0, eps = T.Tensor(g.standard_normal(16)), T.Tensor(g.standard_normal(16))
        out = ddim_step(forward_diffuse(z0, t, eps, s), eps, t, tp, s)
        assert np.max(np.abs(out.data - forward_diffuse(z0, tp, eps, s).data)) < 1e-10


def test_ddim_step_errors():
    s = make_schedule("linear", 10)
    z = T.Tensor([1.0])
    with pytest.raises(ValueError):
        ddim_step(z, z, 3, 3, s)
    with pytest.raises(T.ShapeError):
        ddim_step(z, T.Tensor([1.0, 2.0]), 3, 1, s)


def test_inference_timesteps():
    assert inference_timesteps(100, 10) == [91, 81, 71, 61, 51, 41, 31, 21, 11, 1, 0]
    assert inference_timesteps(10, 10) == list(range(10, -1, -1))
    for steps in (1, 3, 7, 25, 100):
        ts = inference_timesteps(100, steps)
        assert ts[-1] == 0 and all(a > b for a, b in zip(ts, ts[1:]))
    with pytest.raises(ValueError):
        inference_timesteps(10, 11)


def test_decoders_and_encoder_round_trip():
    for kind in ("bilinear", "nearest"):
        D = decoder_matrix(kind)
        assert D.shape == (64, 16)
        assert np.allclose(D.sum(axis=1), 1.0)
        z = np.random.default_rng(1).standard_normal((5, 16))
        assert np.max(np.abs(project_latent(D, decode_linear(D, z)) - z)) < 1e-10
        x = np.tanh(decode_linear(D, 0.5 * z))
        assert np.max(np.abs(encode(D, x) - 0.5 * z)) < 1e-10


def test_toy_data_is_a_pure_function_of_class_index_seed():
    spec = ToyDatasetSpec(seed=3)
    a, b = real_image(spec, 4, 17), real_image(spec, 4, 17)
    assert np.array_equal(a, b) and a.shape == (1, 8, 8)
    assert not np.array_equal(a, real_image(ToyDatasetSpec(seed=4), 4, 17))
    assert np.all(np.abs(a) < 1)
    x, y = real_images(spec, [0, 9], 3)
    assert x.shape == (6, 1, 8, 8) and list(y) == [0, 0, 0, 9, 9, 9]
    with pytest.raises(ValueError):
        real_image(spec, 10, 0)
    with pytest.raises(ValueError):
        ToyDatasetSpec(n_classes=11)


def test_sample_shapes_determinism_and_class_check(tiny_gen):
    z = Rng(0).normal((1, 4, 4))
    a, b = sample(tiny_gen, T.Tensor(z), 3).data, sample(tiny_gen, T.Tensor(z), 3).data
    assert a.shape == (1, 8, 8) and a.tobytes() == b.tobytes()
    zs = Rng(1).normal((4, 1, 4, 4))
    batch = sample(tiny_gen, T.Tensor(zs), [0, 1, 2, 3]).data
    assert batch.shape == (4, 1, 8, 8) and np.all(np.abs(batch) <= 1)
    with pytest.raises(ValueError):
        sample(tiny_gen, T.Tensor(z), 10)
    with pytest.raises(T.ShapeError):
        sample(tiny_gen, T.Tensor(np.zeros((1, 2, 8))), 0)


def test_full_length_subsequence_visits_every_timestep():
    g = skeleton("full", 2, widths=(8,), T_train=5, inference_steps=5)
    assert g.timesteps() == [5, 4, 3, 2, 1, 0]


def test_sample_gradient_matches_finite_differences(tiny_gen):
    z = Rng(2).normal((1, 4, 4))
    w = np.random.default_rng(5).standard_normal((1, 8, 8))
    err = check_gradients(lambda zt: T.sum(T.mul(sample(tiny_gen, zt, 2), T.Tensor(w))), [z])
    assert err < 1e-4


def test_generator_validates_decoder_and_kind(tiny_gen):
    with pytest.raises(ValueError):
        Generator("x", tiny_gen.params, tiny_gen.widths, tiny_gen.schedule, decoder=np.zeros((64, 8)))
    with pytest.raises(ValueError):
        Generator("x", tiny_gen.params, tiny_gen.widths, tiny_gen.schedule, decoder=tiny_gen.decoder, kind="gan")
    with pytest.raises(ValueError):
        Generator("x", tiny_gen.params, tiny_gen.widths, None, decoder=tiny_gen.decoder)


def test_zero_training_steps_returns_initial_denoiser():
    g = skeleton("g", 7, widths=(16,))
    trained, hist = train_denoiser(ToyDatasetSpec(), g, DenoiserTrainConfig(steps=0, per_class=4))
    assert hist == []
    assert all(np.array_equal(trained.params[k].data, g.params[k].data) for k in g.params)


def test_denoiser_training_is_deterministic():
    cfg = DenoiserTrainConfig(steps=20, batch_size=16, per_class=4, seed=3)
    a, ha = train_denoiser(ToyDatasetSpec(), skeleton("g", 7, widths=(16,)), cfg)
    b, hb = train_denoiser(ToyDatasetSpec(), skeleton("g", 7, widths=(16,)), cfg)
    assert ha == hb
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)


@pytest.fixture(scope="module")
def trained_seen():
    cfg = DenoiserTrainConfig(steps=1500, per_class=100, seed=1)
    return train_denoiser(ToyDatasetSpec(), skeleton(SEEN, 3), cfg)


def test_denoiser_learns_class_templates(trained_seen):
    gen, hist = trained_seen
    assert np.mean(hist[-100:]) <= 0.5 * np.mean(hist[:10])
    assert template_correlation(gen, ToyDatasetSpec()) >= 0.9


def test_oneshot_generator_learns_class_templates():
    gen, hist = train_oneshot(ToyDatasetSpec(), "oneshot", DenoiserTrainConfig(steps=1500, per_class=100, seed=1))
    assert gen.kind == "oneshot" and gen.decoder_kind == "bilinear"
    assert np.mean(hist[-100:]) <= 0.5 * np.mean(hist[:10])
    assert template_correlation(gen, ToyDatasetSpec()) >= 0.9


def test_generator_zoo_structure(trained_seen):
    cfg = DenoiserTrainConfig(steps=200, per_class=20)
    zoo = build_generator_zoo(0, train_cfg=cfg, seen=trained_seen[0])
    ids = [g.generator_id for g in zoo]
    assert ids.count(SEEN) == 1 and ids[1:] == list(UNSEEN_IDS)
    by = {g.generator_id: g for g in zoo}
    assert by["cosine"].schedule.kind == "cosine"
    assert by["deep"].widths == (64, 64, 64)
    assert by["steps25"].inference_steps == 25 and by["steps25"].params is by[SEEN].params
    assert by["nearest"].decoder_kind == "nearest"
    assert by["oneshot"].kind == "oneshot"
    z = Rng(9).normal((100, 1, 4, 4))
    seen_mean = sample_images(zoo[0], z, np.arange(100) % 10).mean(axis=0)
    for g in zoo[1:]:
        imgs = sample_images(g, z, np.arange(100) % 10)
        assert imgs.shape == (100, 1, 8, 8) and np.all(np.isfinite(imgs))
        assert np.abs(imgs.mean(axis=0) - seen_mean).mean() > 0
