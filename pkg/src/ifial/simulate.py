"""MCAR and MNAR missingness injection with exact per-feature counts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset

MCAR = "mcar"
MNAR = "mnar"
MECHANISMS = (MCAR, MNAR)


@dataclass(frozen=True)
class MissingSpec:
    mechanism: str
    rate: float
    seed: int = 0
    target_features: tuple[int, ...] | None = None

    def __post_init__(self):
        mech = self.mechanism.lower()
        if mech not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; expected mcar or mnar")
        object.__setattr__(self, "mechanism", mech)
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"rate must lie strictly in (0, 1), got {self.rate}")


def masked_count(rate: float, n: int) -> int:
    """round(rate * n) with halves rounded up."""
    return int(math.floor(rate * n + 0.5))


def inject(data: Dataset, spec: MissingSpec) -> Dataset:
    """Return a copy of ``data`` with missing cells injected per ``spec``.

    MCAR masks ``round(rate*n)`` uniformly chosen cells in each target
    feature. MNAR self-censors: numerical features lose their largest values,
    categorical features lose their most frequent category first.
    """
    features = range(data.d) if spec.target_features is None else spec.target_features
    features = [int(j) for j in features]
    for j in features:
        if not 0 <= j < data.d:
            raise IndexError(f"target feature {j} out of range")
        if data.missing[:, j].any():
            raise ValueError(f"feature {data.schema[j].name!r} already has missing cells")
    rng = np.random.default_rng(spec.seed)
    count = masked_count(spec.rate, data.n)
    missing = data.missing.copy()
    for j in features:
        if spec.mechanism == MCAR:
            rows = rng.choice(data.n, size=count, replace=False)
        elif data.schema[j].is_categorical:
            rows = _mnar_categorical(data.values[:, j], count, rng)
        else:
            rows = _mnar_numerical(data.values[:, j], count, rng)
        missing[rows, j] = True
    return data.with_cells(data.values, missing)


def _mnar_numerical(col: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    shuffled = rng.permutation(col.size)
    order = shuffled[np.argsort(-col[shuffled], kind="stable")]
    return order[:count]


def _mnar_categorical(col: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    codes = col.astype(np.int64)
    freq = np.bincount(codes)
    shuffled = rng.permutation(col.size)
    # most frequent category first, ties by category index, seeded order within a category
    rank_of_code = np.empty(freq.size, dtype=np.int64)
    rank_of_code[np.lexsort((np.arange(freq.size), -freq))] = np.arange(freq.size)
    order = shuffled[np.argsort(rank_of_code[codes[shuffled]], kind="stable")]
    return order[:count]
