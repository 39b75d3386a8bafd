import numpy as np
import pytest
from sklearn.base import clone

from ifial.baselines import AM_FTT, IFIAL, MEDIAN_FTT, Method, impute_median, run_method
from ifial.data import compute_stats, from_arrays
from ifial.estimators import AMFTTClassifier, IFIALClassifier, MedianFTTClassifier
from ifial.model import dump_checkpoint
from ifial.partition import partition_count


def test_impute_median_numeric_and_mode():
    X = np.array([[1.0, 0.0], [np.nan, 1.0], [3.0, 1.0], [10.0, np.nan]])
    data = from_arrays(X, [0, 1, 0, 1], categorical=[False, True])
    filled = impute_median(data, compute_stats(data, range(4)))
    np.testing.assert_array_equal(filled.values[:, 0], [1.0, 3.0, 3.0, 10.0])
    np.testing.assert_array_equal(filled.values[:, 1], [0.0, 1.0, 1.0, 1.0])
    assert not filled.missing.any()


def test_impute_uses_training_statistics_only():
    X = np.array([[1.0], [2.0], [100.0], [np.nan]])
    data = from_arrays(X, [0, 1, 0, 1])
    filled = impute_median(data, compute_stats(data, [0, 1]))
    assert filled.values[3, 0] == 1.5


def test_method_validation():
    with pytest.raises(ValueError):
        Method("bogus")
    with pytest.raises(ValueError):
        Method(AM_FTT, k=3)
    assert Method(IFIAL, 4).k == 4


def test_sklearn_params_and_clone(tiny_model, quick_train):
    est = IFIALClassifier(k=3, model_config=tiny_model, train_config=quick_train)
    assert est.get_params() == {"k": 3, "model_config": tiny_model, "train_config": quick_train}
    other = clone(est)
    assert other.get_params()["k"] == 3 and not hasattr(other, "state_")
    assert set(AMFTTClassifier().get_params()) == {"model_config", "train_config"}


def test_session_count_matches_windows(mixed_data, tiny_model, quick_train):
    for k in (2, 3, 4):
        est = IFIALClassifier(k=k, model_config=tiny_model, train_config=quick_train).fit(mixed_data)
        assert len(est.session_logs_) == partition_count(4, k) == est.plan_.P


def test_default_k_is_half_d(mixed_data, tiny_model, quick_train):
    est = IFIALClassifier(model_config=tiny_model, train_config=quick_train).fit(mixed_data)
    assert est.plan_.k == 2


def test_array_input_and_predictions(tiny_model, quick_train):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    X[rng.random(X.shape) < 0.2] = np.nan
    y = np.arange(30) % 3
    est = IFIALClassifier(model_config=tiny_model, train_config=quick_train).fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (30, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert set(est.predict(X)) <= {0, 1, 2}
    with pytest.raises(ValueError):
        est.predict_proba(X[:, :2])


def test_median_equals_am_on_complete_data(tiny_model, quick_train):
    rng = np.random.default_rng(1)
    data = from_arrays(rng.normal(size=(30, 4)), np.arange(30) % 2)
    a = AMFTTClassifier(tiny_model, quick_train).fit(data)
    m = MedianFTTClassifier(tiny_model, quick_train).fit(data)
    assert dump_checkpoint(a.state_) == dump_checkpoint(m.state_)
    assert np.array_equal(a.predict_proba(data), m.predict_proba(data))


def test_am_equals_ifial_with_full_window(mixed_data, tiny_model, quick_train):
    a = AMFTTClassifier(tiny_model, quick_train).fit(mixed_data)
    i = IFIALClassifier(k=4, model_config=tiny_model, train_config=quick_train).fit(mixed_data)
    assert dump_checkpoint(a.state_) == dump_checkpoint(i.state_)


def test_checkpoint_round_trip(mixed_data, tiny_model, quick_train):
    est = IFIALClassifier(k=3, model_config=tiny_model, train_config=quick_train).fit(mixed_data)
    back = IFIALClassifier.from_checkpoint(est.to_checkpoint())
    assert isinstance(back, IFIALClassifier) and back.k == 3
    assert np.array_equal(back.predict_proba(mixed_data), est.predict_proba(mixed_data))
    assert back.to_checkpoint() == est.to_checkpoint()


@pytest.mark.parametrize("method", [Method(IFIAL, 2), Method(AM_FTT), Method(MEDIAN_FTT)])
def test_run_method_outputs_probabilities(mixed_data, tiny_model, quick_train, method):
    proba = run_method(method, np.arange(30), np.arange(30, 40), mixed_data, tiny_model, quick_train)
    assert proba.shape == (10, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        run_method(method, np.arange(30), np.arange(25, 40), mixed_data, tiny_model, quick_train)
