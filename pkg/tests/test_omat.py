import numpy as np
import pytest

from omatlab import tensor as T
from omatlab.detector import LabeledSet, accuracy, forward, init_detector, split_train_val
from omatlab.omat.lora import apply_lora, merge_lora, trainable_count
from omatlab.omat.train import OmatConfig, checkpoint_score, lambda_adv, omat_train, parse_strategy, strategy_sweep
from omatlab.rng import Rng


def test_lambda_values():
    assert lambda_adv(1) == pytest.approx(1.2, abs=1e-15)
    assert lambda_adv(10) == 3.0 and lambda_adv(20) == 3.0
    vals = [lambda_adv(e) for e in range(1, 40)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert min(vals) >= 1.2 - 1e-15 and max(vals) == 3.0
    assert all(v == 3.0 for v in vals[9:])
    with pytest.raises(ValueError):
        lambda_adv(0)


def test_checkpoint_score_values():
    assert checkpoint_score(1.0, 1.0) == 1.0
    assert checkpoint_score(0.9, 0.5) == pytest.approx(0.74, abs=1e-15)
    assert checkpoint_score(0.0, 1.0) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(ValueError):
        checkpoint_score(1.1, 0.5)


def test_strategy_parsing_and_config_defaults():
    assert parse_strategy("lora(4)") == ("lora", 4) and parse_strategy("lora:8") == ("lora", 8)
    assert parse_strategy("head_only") == ("head_only", None)
    with pytest.raises(ValueError):
        parse_strategy("prefix")
    assert OmatConfig("full").lr == 1e-4 and OmatConfig("full").batch == 128
    assert OmatConfig("lora(4)").lr == 2e-4 and OmatConfig("lora(4)").batch == 32
    with pytest.raises(ValueError):
        OmatConfig(epochs=0)
    with pytest.raises(ValueError):
        OmatConfig(lambda_base=2.0, lambda_cap=1.0)
    with pytest.raises(ValueError):
        OmatConfig(w_val=0.5, w_adv=0.4)


@pytest.fixture
def base():
    d = init_detector("base", Rng(3), "frozen_backbone", (64, 24, 12))
    params = {k: T.Tensor(v.data.copy()) for k, v in d.params.items()}
    params["head.0.weight"] = T.Tensor(Rng(4).normal((12, 1), std=0.3))
    return d.with_params(params)


def _images(n, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (n, 1, 8, 8))


def test_lora_is_identity_at_init_and_merges_exactly(base):
    d = apply_lora(base, None, 4, Rng(1))
    x = T.Tensor(_images(16))
    assert forward(d, x).data.tobytes() == forward(base, x).data.tobytes()
    for a in d.adapters.values():
        a.B.data = Rng(2).normal(a.B.data.shape)
    merged = merge_lora(d)
    assert not merged.adapters
    assert np.max(np.abs(forward(merged, x).data - forward(d, x).data)) < 1e-9
    assert np.max(np.abs(forward(d, x).data - forward(base, x).data)) > 1e-3


def test_lora_settings_and_parameter_count(base):
    d = apply_lora(base, None, 4, Rng(1))
    assert set(d.adapters) == {"backbone.0", "backbone.1"}
    for a in d.adapters.values():
        assert a.alpha == 8.0 and a.dropout == 0.1 and np.all(a.B.data == 0)
    assert trainable_count(d) == 4 * (64 + 24) + 4 * (24 + 12) + 12 + 1
    with pytest.raises(ValueError):
        apply_lora(base, ["backbone.1"], 12, Rng(1))
    with pytest.raises(KeyError):
        apply_lora(base, ["head.0"], 2, Rng(1))


def test_adapter_dropout_only_in_training(base):
    d = apply_lora(base, None, 2, Rng(1))
    for a in d.adapters.values():
        a.B.data = np.ones_like(a.B.data)
    x = T.Tensor(_images(8))
    assert forward(d, x).data.tobytes() == forward(d, x).data.tobytes()
    assert not np.array_equal(forward(d, x, training=True, rng=Rng(5)).data, forward(d, x).data)
    with pytest.raises(ValueError):
        forward(d, x, training=True)


def _data():
    std = LabeledSet.real(_images(60, 1)).concat(LabeledSet.fake(np.clip(_images(60, 2) + 0.3, -1, 1), "seen"))
    adv = LabeledSet.adversarial(_images(16, 3))
    return std, adv


@pytest.mark.parametrize("strategy", ["head_only", "lora(2)", "full"])
def test_strategies_touch_only_their_parameters(base, strategy):
    std, adv = _data()
    res = omat_train(base, std, adv, OmatConfig(strategy, epochs=2, learning_rate=1e-2, batch_size=16))
    out = res.detector
    changed = {k for k in base.params if not np.array_equal(out.params[k].data, base.params[k].data)}
    if strategy == "full":
        assert any(k.startswith("backbone.") for k in changed)
    else:
        assert changed == {"head.0.weight", "head.0.bias"}
    assert bool(out.adapters) == strategy.startswith("lora")


def test_history_and_best_checkpoint(base):
    std, adv = _data()
    res = omat_train(base, std, adv, OmatConfig("lora(2)", epochs=4, learning_rate=1e-2, batch_size=16, seed=2))
    assert [h.epoch for h in res.history] == [1, 2, 3, 4]
    assert [h.lambda_adv for h in res.history] == pytest.approx([1.2, 1.4, 1.6, 1.8])
    scores = [h.score for h in res.history]
    assert res.best_epoch == int(np.argmax(scores)) + 1
    best = res.history[res.best_epoch - 1]
    assert best.adv_acc == accuracy(res.detector, adv)
    assert best.score == pytest.approx(0.6 * best.val_acc + 0.4 * best.adv_acc)


def test_single_epoch_returns_its_only_checkpoint(base):
    std, adv = _data()
    res = omat_train(base, std, adv, OmatConfig("head_only", epochs=1, learning_rate=1e-2))
    assert res.best_epoch == 1 and len(res.checkpoints) == 1


def test_empty_adversarial_set_is_continued_training(base):
    std, _ = _data()
    _, val = split_train_val(std, salt=7)
    res = omat_train(base, std, LabeledSet.empty(), OmatConfig("head_only", epochs=3, learning_rate=1e-2), val_salt=7)
    assert res.history[-1].val_acc >= accuracy(base, val) - 0.05


def test_omat_is_bit_reproducible(base):
    std, adv = _data()
    cfg = OmatConfig("lora(2)", epochs=2, learning_rate=1e-2, batch_size=16, seed=5)
    a, b = omat_train(base, std, adv, cfg), omat_train(base, std, adv, cfg)
    x = T.Tensor(_images(10, 9))
    assert forward(a.detector, x).data.tobytes() == forward(b.detector, x).data.tobytes()


def test_omat_rejects_non_adversarial_items(base):
    std, _ = _data()
    with pytest.raises(ValueError):
        omat_train(base, std, std, OmatConfig("head_only", epochs=1))


def test_sweep_deltas_are_exact(base):
    std, adv = _data()
    sets = {"seen": std, "adv": adv}
    rep = strategy_sweep(base, std, adv, ["head_only"], sets, OmatConfig(epochs=1, learning_rate=1e-2))
    row = rep.rows[0]
    for k in sets:
        assert row.deltas[k] == row.report.sets[k].acc - rep.base.sets[k].acc
    table = rep.table()
    assert [r["model"] for r in table] == ["base", "head_only"]
    assert table[1]["AVG"].endswith(f"({100 * row.avg_delta:+.2f})")
    with pytest.raises(ValueError):
        strategy_sweep(base, std, adv, [], sets)
