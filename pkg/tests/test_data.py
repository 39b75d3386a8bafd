import math

import numpy as np
import pytest

from ifial.data import DataError, compute_stats, from_arrays, load_csv, standardize, write_csv

COLUMNS = [
    {"name": "age", "kind": "numerical"},
    {"name": "color", "kind": "categorical"},
    {"name": "label", "kind": "target"},
]


def test_load_csv_single_missing_cell(csv_files):
    path, schema = csv_files("age,color,label\n31,red,yes\n,blue,no\n45,red,no\n", COLUMNS)
    data = load_csv(path, schema)
    assert data.n == 3 and data.d == 2
    assert data.missing.sum() == 1
    assert data.missing[1, 0]
    stats = compute_stats(data, range(3))
    assert stats.missing_rate[0] == 1 / 3
    assert stats.missing_rate[1] == 0.0


def test_load_csv_complete_has_zero_rates(csv_files):
    path, schema = csv_files("age,color,label\n1,a,x\n2,b,y\n0,a,x\n", COLUMNS)
    data = load_csv(path, schema)
    assert not data.has_missing()
    np.testing.assert_array_equal(compute_stats(data, range(3)).missing_rate, [0.0, 0.0])


def test_numeric_parse_error_names_row_and_column(csv_files):
    path, schema = csv_files("age,color,label\n1,a,x\nabc,b,y\n", COLUMNS)
    with pytest.raises(DataError, match=r"line 3.*'age'.*'abc'"):
        load_csv(path, schema)


def test_missing_target_rejected(csv_files):
    path, schema = csv_files("age,color,label\n1,a,x\n2,b,\n", COLUMNS)
    with pytest.raises(DataError, match="missing target"):
        load_csv(path, schema)


def test_malformed_row_reports_line(csv_files):
    path, schema = csv_files("age,color,label\n1,a,x\n2,b\n", COLUMNS)
    with pytest.raises(DataError, match="line 3"):
        load_csv(path, schema)


def test_unknown_categories_appended_in_first_seen_order(csv_files):
    cols = [dict(COLUMNS[0]), {"name": "color", "kind": "categorical", "categories": ["green"]}, COLUMNS[2]]
    path, schema = csv_files("age,color,label\n1,red,x\n2,blue,y\n3,red,x\n4,green,y\n", cols)
    data = load_csv(path, schema)
    assert data.schema[1].categories == ["green", "red", "blue"]
    np.testing.assert_array_equal(data.values[:, 1], [1, 2, 1, 0])


def test_observed_zero_is_not_missing(csv_files):
    path, schema = csv_files("age,color,label\n0,a,x\n,a,y\n0.0,,x\n", COLUMNS)
    data = load_csv(path, schema)
    assert [data.cell(i, 0) for i in range(3)] == [0.0, None, 0.0]
    assert data.cell(2, 1) is None
    # every cell is either tagged missing or carries a value of the schema's kind
    for i in range(data.n):
        for j, feat in enumerate(data.schema):
            cell = data.cell(i, j)
            assert (cell is None) == bool(data.missing[i, j])
            if cell is not None:
                assert isinstance(cell, int if feat.is_categorical else float)


def test_round_trip_preserves_values_and_pattern(tmp_path, mixed_data):
    path, schema = tmp_path / "out.csv", tmp_path / "schema.json"
    write_csv(mixed_data, path, schema)
    back = load_csv(path, schema)
    np.testing.assert_array_equal(back.missing, mixed_data.missing)
    obs = ~mixed_data.missing
    np.testing.assert_allclose(back.values[obs], mixed_data.values[obs], rtol=1e-12)
    np.testing.assert_array_equal(back.labels, mixed_data.labels)


def test_stats_sample_std_and_mean():
    X = np.array([[2.0], [4.0], [np.nan]])
    data = from_arrays(X, [0, 1, 0])
    stats = compute_stats(data, [0, 1])
    assert stats.mean[0] == 3.0
    assert stats.std[0] == pytest.approx(math.sqrt(2.0), abs=1e-15)


def test_stats_missing_rate_over_subset():
    X = np.arange(12, dtype=float)[:, None]
    X[[1, 4, 7]] = np.nan
    data = from_arrays(X, np.arange(12) % 2)
    assert compute_stats(data, range(10)).missing_rate[0] == 0.3


def test_stats_single_observation_std_is_one():
    data = from_arrays(np.array([[5.0], [np.nan], [np.nan]]), [0, 1, 0])
    assert compute_stats(data, range(3)).std[0] == 1.0


def test_stats_empty_subset_rejected(mixed_data):
    with pytest.raises(ValueError):
        compute_stats(mixed_data, [])


def test_stats_never_read_outside_subset(mixed_data):
    rows = np.arange(0, 40, 2)
    poisoned_values = mixed_data.values.copy()
    poisoned_values[1::2] = np.nan
    poisoned_missing = mixed_data.missing.copy()
    poisoned_missing[1::2] = ~poisoned_missing[1::2]
    poisoned = mixed_data.with_cells(poisoned_values, poisoned_missing)
    a, b = compute_stats(mixed_data, rows), compute_stats(poisoned, rows)
    for field in ("missing_rate", "mean", "std", "median", "mode"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_standardize_examples():
    X = np.array([[5.0, 2.0], [np.nan, 1.0], [1.0, 0.0]])
    data = from_arrays(X, [0, 1, 0], categorical=[False, True])
    stats = compute_stats(data, range(3))
    assert (stats.mean[0], stats.std[0]) == (3.0, pytest.approx(2.8284271247461903))
    stats.std[0] = 2.0
    out = standardize(data, stats)
    assert out.values[0, 0] == 1.0
    assert out.missing[1, 0]
    np.testing.assert_array_equal(out.values[:, 1], [2.0, 1.0, 0.0])


def test_dataset_is_read_only(mixed_data):
    with pytest.raises(ValueError):
        mixed_data.values[0, 0] = 1.0
