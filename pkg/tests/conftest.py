import json

import numpy as np
import pytest

from ifial.data import from_arrays
from ifial.model import ModelConfig
from ifial.train import TrainConfig


@pytest.fixture
def tiny_model():
    return ModelConfig(model_dim=8, num_layers=2, num_heads=2, ffn_dim=16, dropout=0.0, activation="gelu")


@pytest.fixture
def quick_train():
    return TrainConfig(learning_rate=1e-2, max_epochs=4, batch_size=16, patience=2, seed=0)


@pytest.fixture
def mixed_data():
    """40 rows, 3 numerical + 1 categorical feature, about 25% missing, 2 classes."""
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 4))
    X[:, 3] = rng.integers(0, 3, size=40)
    X[rng.random(X.shape) < 0.25] = np.nan
    y = np.arange(40) % 2
    return from_arrays(X, y, categorical=[False, False, False, True], feature_names=["a", "b", "c", "kind"])


@pytest.fixture
def csv_files(tmp_path):
    def make(text, columns):
        data = tmp_path / "data.csv"
        schema = tmp_path / "schema.json"
        data.write_text(text, encoding="utf-8")
        schema.write_text(json.dumps({"columns": columns}), encoding="utf-8")
        return data, schema

    return make
