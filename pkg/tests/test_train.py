from dataclasses import replace

import numpy as np
import pytest

from ifial import train as train_mod
from ifial.data import compute_stats
from ifial.model import ModelState, dump_checkpoint
from ifial.partition import build_plan, partition_view, plan_from_rates
from ifial.train import Adam, TrainConfig, evaluate_loss, predict, train_ifial, validation_split


def _fit(data, mcfg, tcfg, k=2, **kw):
    plan = build_plan(compute_stats(data, range(data.n)), k)
    return plan, *train_ifial(data, plan, mcfg, tcfg, **kw)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=10, max_epochs=10)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=0.6)
    full = TrainConfig.full_scale()
    assert (full.learning_rate, full.max_epochs, full.batch_size, full.patience) == (1e-5, 300, 128, 50)


def test_validation_split_is_stratified_and_disjoint():
    labels = np.array([0] * 30 + [1] * 10)
    train, val = validation_split(labels, np.arange(40), 0.2, np.random.default_rng(0))
    assert np.intersect1d(train, val).size == 0
    assert np.union1d(train, val).size == 40
    assert (labels[val] == 0).sum() == 6 and (labels[val] == 1).sum() == 2


def test_adam_touches_only_active_keys():
    params = {"a": np.ones(3), "b": np.ones(3)}
    grads = {"a": np.ones(3), "b": np.ones(3)}
    opt = Adam(["a"], lr=0.1)
    opt.step(params, grads)
    np.testing.assert_allclose(params["a"], 0.9)
    assert np.array_equal(params["b"], np.ones(3))


def test_single_window_plan_runs_one_session(mixed_data, tiny_model, quick_train):
    plan = plan_from_rates([0.1, 0.2, 0.3, 0.0], 4)
    assert plan.P == 1
    _, logs = train_ifial(mixed_data, plan, tiny_model, quick_train)
    assert len(logs) == 1 and len(logs[0].features) == 4


def test_session_count_and_window_order(mixed_data, tiny_model, quick_train):
    seen = []
    plan, _, logs = _fit(mixed_data, tiny_model, quick_train, on_tokenize=lambda i, names: seen.append((i, names)))
    assert len(logs) == plan.P
    for i, names in seen:
        assert names == [mixed_data.feature_names[j] for j in plan.windows[i]]


def test_each_session_tokenizes_only_its_window(mixed_data, tiny_model, quick_train, monkeypatch):
    calls = []
    original = train_mod.tokenize

    def spy(view, state, rows, **kw):
        calls.append(tuple(view.columns))
        return original(view, state, rows, **kw)

    monkeypatch.setattr(train_mod, "tokenize", spy)
    plan = build_plan(compute_stats(mixed_data, range(mixed_data.n)), 2)
    train_ifial(mixed_data, plan, tiny_model, quick_train)
    assert set(calls) == {tuple(w) for w in plan.windows}


def test_features_outside_window_unchanged(mixed_data, tiny_model, quick_train):
    plan = build_plan(compute_stats(mixed_data, range(mixed_data.n)), 2)
    first = replace(plan, windows=plan.windows[:1])
    state, _ = train_ifial(mixed_data, first, tiny_model, quick_train)
    snapshot = {k: v.copy() for k, v in state.params.items()}
    second = replace(plan, windows=plan.windows[1:2])
    state, _ = train_ifial(mixed_data, second, tiny_model, quick_train, state=state)
    untouched = set(mixed_data.feature_names[j] for j in plan.windows[0]) - set(
        mixed_data.feature_names[j] for j in plan.windows[1]
    )
    assert untouched
    for name in untouched:
        for key in state.feature_keys(name):
            assert np.array_equal(state.params[key], snapshot[key])


def test_early_stop_exactly_after_patience(mixed_data, tiny_model, monkeypatch):
    scripted = iter([1.0, 0.9, 0.8, 0.85, 0.86, 0.87, 0.5, 0.4])
    monkeypatch.setattr(train_mod, "evaluate_loss", lambda *a, **k: next(scripted))
    tcfg = TrainConfig(learning_rate=1e-2, max_epochs=20, batch_size=16, patience=3)
    plan = plan_from_rates([0.0] * 4, 4)
    _, logs = train_ifial(mixed_data, plan, tiny_model, tcfg)
    log = logs[0]
    assert log.best_epoch == 2 and log.epochs_run == 5 and log.early_stopped
    assert log.best_val_loss == 0.8


def test_best_parameters_are_restored(mixed_data, tiny_model):
    tcfg = TrainConfig(learning_rate=0.05, max_epochs=12, batch_size=8, patience=3, seed=1)
    plan = plan_from_rates([0.0] * 4, 4)
    state, logs = train_ifial(mixed_data, plan, tiny_model, tcfg)
    _, val = validation_split(mixed_data.labels, np.arange(mixed_data.n), tcfg.val_fraction,
                              np.random.default_rng(tcfg.seed))
    loss = evaluate_loss(state, partition_view(mixed_data, plan, 0), val, mixed_data.labels)
    assert loss == pytest.approx(logs[0].best_val_loss, abs=1e-12)
    if logs[0].early_stopped:
        assert logs[0].epochs_run == logs[0].best_epoch + tcfg.patience


def test_training_is_deterministic(mixed_data, tiny_model, quick_train):
    mcfg = replace(tiny_model, dropout=0.2)
    _, a, _ = _fit(mixed_data, mcfg, quick_train)
    _, b, _ = _fit(mixed_data, mcfg, quick_train)
    assert dump_checkpoint(a) == dump_checkpoint(b)
    _, c, _ = _fit(mixed_data, mcfg, replace(quick_train, seed=1))
    assert dump_checkpoint(a) != dump_checkpoint(c)


def test_rows_outside_subset_never_read(mixed_data, tiny_model, quick_train):
    rows = np.arange(30)
    _, a, _ = _fit(mixed_data, tiny_model, quick_train, rows=rows)
    values = mixed_data.values.copy()
    values[30:, :3] = 99.0
    values[30:, 3] = 0.0
    other = mixed_data.with_cells(values)
    _, b, _ = _fit(other, tiny_model, quick_train, rows=rows, k=2)
    assert dump_checkpoint(a) == dump_checkpoint(b)


def test_mask_missing_false_needs_complete_data(mixed_data, tiny_model, quick_train):
    with pytest.raises(ValueError):
        _fit(mixed_data, tiny_model, quick_train, mask_missing=False)


def test_predict_probabilities(mixed_data, tiny_model, quick_train):
    _, state, _ = _fit(mixed_data, tiny_model, quick_train)
    proba = predict(state, mixed_data)
    assert proba.shape == (40, 2)
    assert np.all(proba >= 0) and np.all(proba <= 1)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)


def test_predict_warns_on_unseen_feature(mixed_data, tiny_model):
    state = ModelState.init(tiny_model)
    with pytest.warns(UserWarning, match="never seen"):
        proba = predict(state, mixed_data)
    assert np.all(np.isfinite(proba))
