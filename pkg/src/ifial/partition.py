"""Overlapping fixed-size feature windows ordered by missing rate."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FeatureStats


def partition_count(d: int, k: int) -> int:
    """Closed-form number of windows: 1 + ceil((d - k) / (k - ceil(k/2)))."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if d <= k:
        return 1
    step = k - math.ceil(k / 2)
    return 1 + -(-(d - k) // step)


def default_k(d: int) -> int:
    return max(2, math.ceil(d / 2))


@dataclass(frozen=True)
class PartitionPlan:
    k: int
    sorted_features: tuple[int, ...]
    windows: tuple[tuple[int, ...], ...]

    @property
    def d(self) -> int:
        return len(self.sorted_features)

    @property
    def overlap(self) -> int:
        return math.ceil(self.k / 2)

    @property
    def step(self) -> int:
        return self.k - self.overlap

    @property
    def P(self) -> int:
        return len(self.windows)

    def to_dict(self, names=None) -> dict:
        out = {
            "d": self.d,
            "k": self.k,
            "overlap": self.overlap,
            "step": self.step,
            "P": self.P,
            "sorted_features": list(self.sorted_features),
            "windows": [list(w) for w in self.windows],
        }
        if names is not None:
            out["window_names"] = [[names[j] for j in w] for w in self.windows]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> PartitionPlan:
        return cls(
            k=int(obj["k"]),
            sorted_features=tuple(int(j) for j in obj["sorted_features"]),
            windows=tuple(tuple(int(j) for j in w) for w in obj["windows"]),
        )


def plan_from_rates(missing_rates, k: int) -> PartitionPlan:
    rates = np.asarray(missing_rates, dtype=np.float64)
    d = rates.size
    if k < 2:
        raise ValueError("k must be at least 2")
    if d < 2:
        raise ValueError("need at least two features to partition")
    # lexsort keys: last is primary, so ties fall back to the column index
    order = tuple(int(j) for j in np.lexsort((np.arange(d), rates)))
    if k >= d:
        if k > d:
            warnings.warn(f"k={k} exceeds d={d}; using a single window of all features", stacklevel=2)
        return PartitionPlan(k=d, sorted_features=order, windows=(order,))
    step = k - math.ceil(k / 2)
    windows = []
    start = 0
    while True:
        lo = min(start, d - k)
        window = order[lo : lo + k]
        if not windows or windows[-1] != window:
            windows.append(window)
        if lo + k >= d:
            break
        start += step
    return PartitionPlan(k=k, sorted_features=order, windows=tuple(windows))


def build_plan(stats: FeatureStats, k: int) -> PartitionPlan:
    """Sort features by ascending missing rate and cut overlapping windows of ``k``."""
    return plan_from_rates(stats.missing_rate, k)


@dataclass(frozen=True, eq=False)
class DatasetView:
    """Column subset of a dataset; holds a reference, copies nothing until read."""

    data: Dataset
    columns: tuple[int, ...]

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def labels(self) -> np.ndarray:
        return self.data.labels

    @property
    def schema(self):
        return tuple(self.data.schema[j] for j in self.columns)

    @property
    def feature_names(self) -> list[str]:
        return [self.data.schema[j].name for j in self.columns]

    def cells(self, rows) -> tuple[np.ndarray, np.ndarray]:
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(self.columns, dtype=np.intp)
        return self.data.values[np.ix_(rows, cols)], self.data.missing[np.ix_(rows, cols)]

    def missing_rates(self) -> np.ndarray:
        return self.data.missing[:, list(self.columns)].mean(axis=0)


def partition_view(data: Dataset, plan: PartitionPlan, i: int) -> DatasetView:
    if not 0 <= i < plan.P:
        raise IndexError(f"window index {i} out of range for P={plan.P}")
    if plan.d != data.d:
        raise ValueError("plan was built for a different feature count")
    return DatasetView(data, plan.windows[i])


def full_view(data: Dataset, columns=None) -> DatasetView:
    return DatasetView(data, tuple(range(data.d)) if columns is None else tuple(columns))
