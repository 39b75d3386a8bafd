"""Seeded synthetic classification tables for smoke tests and demos."""
from __future__ import annotations

import numpy as np

from .data import from_arrays


def gaussian_classes(n=600, d=8, informative=4, separation=2.0, seed=0, name="gaussian"):
    """Two Gaussian classes with unit variance; the first ``informative``
    features have class means ``0`` and ``separation`` (in units of sigma)."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    y = y[rng.permutation(n)]
    X = rng.normal(size=(n, d))
    X[:, :informative] += separation * y[:, None]
    return from_arrays(X, y, name=name)
