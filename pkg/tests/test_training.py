import math

import numpy as np
import pytest
import torch

from steve.data import Dataset, SynthConfig, WindowSpec, generate_synthetic, make_windows
from steve.errors import ConfigError, DivergenceError, EmptyScenarioError
from steve.model import STEVE, ModelConfig
from steve.training import (
    VARIANTS, TrainConfig, ablation_suite, build_model, dwa_weights, evaluate, metrics, mi_estimate,
    objective, predict_samples, prepare, train, write_ablation,
)

SPEC = WindowSpec(recent_steps=9, periodic_days=1, periodic_steps_per_day=1)


@pytest.fixture(scope="module")
def tiny():
    ds, _ = generate_synthetic(SynthConfig(grid_shape=(2, 3), days=6, seed=1))
    return ds, prepare(ds, SPEC)


def _model(ds, **kw):
    return build_model(ds, SPEC, hidden_dim=4, **kw)


def test_dwa_hand_oracle():
    prev = [[2.0, 1.0, 4.0], [2.0, 2.0, 4.0]]
    w = dwa_weights(prev, temperature=2.0)
    e = np.array([math.exp(0.5), math.exp(1.0), math.exp(0.5)])
    np.testing.assert_allclose(w, 3 * e / e.sum(), rtol=1e-12)


def test_dwa_fallbacks_and_masking():
    np.testing.assert_array_equal(dwa_weights([[1.0, 2.0]], 2.0), [1.0, 1.0])
    np.testing.assert_array_equal(dwa_weights([[0.0, 1.0], [1.0, 1.0]], 2.0), [1.0, 1.0])
    w = dwa_weights([[1.0, 9.0, 1.0], [1.0, 0.0, 3.0]], 2.0, active=[True, False, True])
    assert w[1] == 0.0 and w.sum() == pytest.approx(2.0)
    assert w[2] > w[0]


def test_metric_oracle():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 5, size=(4, 3, 2))
    y_hat = y + rng.normal(size=y.shape)
    mask = np.array([True, False, True])
    mae, mape = metrics(y, y_hat, mask, mape_floor=1.0)
    errs, pct = [], []
    for s in range(4):
        for n in (0, 2):
            for c in range(2):
                errs.append(abs(y[s, n, c] - y_hat[s, n, c]))
                if y[s, n, c] >= 1.0:
                    pct.append(errs[-1] / y[s, n, c])
    assert mae == pytest.approx(sum(errs) / len(errs), abs=1e-12)
    assert mape == pytest.approx(100 * sum(pct) / len(pct), abs=1e-9)


def test_metric_edge_cases():
    assert math.isnan(metrics(np.zeros((1, 2, 1)), np.ones((1, 2, 1)))[1])
    with pytest.raises(EmptyScenarioError):
        metrics(np.zeros((0, 2, 1)), np.zeros((0, 2, 1)))
    with pytest.raises(EmptyScenarioError):
        metrics(np.ones((1, 2, 1)), np.ones((1, 2, 1)), node_mask=[False, False])


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(precision="float16").validate()
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0).validate()


def test_train_record_and_artifacts(tiny, tmp_path):
    ds, sp = tiny
    model = _model(ds)
    rec = train(model, sp.train, sp.val, TrainConfig(max_epochs=2), run_dir=tmp_path)
    assert [e["epoch"] for e in rec.epochs] == [1, 2]
    for e in rec.epochs:
        assert e["L_O"] == pytest.approx(e["L_P"] + e["L_S"] + e["L_D"], rel=1e-6)  # float32 batches
    assert rec.best_val_mae == min(rec.val_mae)
    for name in ("config.snapshot", "checkpoint.best", "metrics.csv"):
        assert (tmp_path / name).is_file()
    restored = _model(ds)
    restored.load_checkpoint(tmp_path / "checkpoint.best")
    assert evaluate(restored, sp.val)[0] == pytest.approx(rec.best_val_mae, rel=1e-6)


def test_training_deterministic(tiny):
    ds, sp = tiny
    runs = []
    for _ in range(2):
        rec = train(_model(ds), sp.train, sp.val, TrainConfig(max_epochs=2, seed=5), VARIANTS["wo_tl"])
        runs.append([round(e[k], 6) for e in rec.epochs for k in ("L_O", "val_MAE")])
    assert runs[0] == runs[1]


def test_early_stopping_restores_best(tiny):
    ds, sp = tiny
    model = _model(ds)
    rec = train(model, sp.train, sp.val, TrainConfig(max_epochs=30, patience=1, learning_rate=0.05))
    assert len(rec.epochs) < 30 or rec.best_epoch == 30
    assert rec.epochs[rec.best_epoch - 1]["val_MAE"] == rec.best_val_mae == min(rec.val_mae)
    assert evaluate(model, sp.val)[0] == pytest.approx(rec.best_val_mae, rel=1e-6)


def test_variants_change_objective(tiny):
    ds, sp = tiny
    model = _model(ds)
    from steve.training import _batch_tensors, fit_scaler
    fit_scaler(model, sp.train)
    batch = _batch_tensors(sp.train[:8], model.dtype)
    w = torch.ones(6)
    _, _, _, l_d, terms = objective(model, batch, VARIANTS["wo_idp"], w)
    assert l_d.item() == 0.0
    _, _, _, l_d, terms = objective(model, batch, VARIANTS["full"], w)
    assert l_d.item() >= 0.0
    _, _, _, _, terms = objective(model, batch, VARIANTS["wo_sl"], w)
    assert terms[0] == 0 and terms[3] == 0


def test_divergence_raises(tiny):
    ds, sp = tiny
    model = _model(ds)
    with torch.no_grad():
        model.head_i.conv.weight.fill_(math.nan)
    from steve.training import _batch_tensors
    with pytest.raises(DivergenceError):
        objective(model, _batch_tensors(sp.train[:4], model.dtype), VARIANTS["full"], torch.ones(6))


def test_float64_training(tiny):
    ds, sp = tiny
    model = _model(ds)
    train(model, sp.train, sp.val, TrainConfig(max_epochs=1, precision="float64"))
    y_hat, _, alpha = predict_samples(model, sp.test[:3])
    assert y_hat.dtype == np.float64
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)


def test_checkpoint_keeps_precision(tiny, tmp_path):
    ds, _ = tiny
    model = _model(ds).double()
    model.save_checkpoint(tmp_path / "c")
    with np.load(tmp_path / "c") as data:
        assert data["prior.u.weight"].dtype == np.float64


def test_model_seeded_construction(tiny):
    ds, _ = tiny
    a, b = _model(ds, seed=3), _model(ds, seed=3)
    for (k, v), w in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(v, w), k
    state = torch.random.get_rng_state()
    _model(ds, seed=4)
    assert torch.equal(state, torch.random.get_rng_state())


def test_mi_estimate_finite(tiny):
    ds, sp = tiny
    model = _model(ds)
    assert math.isfinite(mi_estimate(model, sp.train[:64], sp.test[:32], steps=5))


def test_ablation_suite_rows(tiny, tmp_path):
    ds, _ = tiny
    rows, runs = ablation_suite(ds, TrainConfig(max_epochs=1), seeds=(0, 1), variants=("full", "wo_ti"),
                                scenarios=("all", "holiday"), model_kw={"hidden_dim": 4}, spec=SPEC)
    assert len(runs) == 4 and len(rows) == 4
    full = [r for r in rows if r["variant"] == "full" and r["scenario"] == "all"][0]
    expected = np.mean([r["results"]["all"][0] for r in runs if r["variant"] == "full"])
    assert full["MAE"] == pytest.approx(expected)
    assert full["reference"]
    write_ablation(rows, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "variant,scenario,MAE,MAPE,reference"
