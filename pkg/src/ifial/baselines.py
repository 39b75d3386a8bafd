"""Comparison methods sharing the same transformer: AM-FTT and median-imputed FTT."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FeatureStats

IFIAL = "ifial"
AM_FTT = "am_ftt"
MEDIAN_FTT = "median_ftt"
METHOD_IDS = (IFIAL, AM_FTT, MEDIAN_FTT)


@dataclass(frozen=True)
class Method:
    id: str
    k: int | None = None

    def __post_init__(self):
        if self.id not in METHOD_IDS:
            raise ValueError(f"unknown method {self.id!r}; expected one of {METHOD_IDS}")
        # ifial with k=None means k = ceil(d/2), resolved at fit time
        if self.k is not None and self.id != IFIAL:
            raise ValueError("k is only meaningful for ifial")
        if self.k is not None and self.k < 2:
            raise ValueError("k must be at least 2")

    @property
    def label(self) -> str:
        return self.id


def impute_median(data: Dataset, stats: FeatureStats) -> Dataset:
    """Fill missing numerical cells with the median and categorical cells with the mode.

    ``stats`` must come from the training rows; the same values are used for
    every row, test rows included.
    """
    if not data.has_missing():
        return data
    values = data.values.copy()
    missing = data.missing
    for j, feat in enumerate(data.schema):
        col_missing = missing[:, j]
        if not col_missing.any():
            continue
        if stats.observed_count[j] == 0:
            warnings.warn(f"feature {feat.name!r} has no observed training values; imputing 0", stacklevel=2)
            fill = 0.0
        elif feat.is_categorical:
            fill = float(stats.mode[j])
        else:
            fill = float(stats.median[j])
        values[col_missing, j] = fill
    return data.with_cells(values, np.zeros_like(missing))


def make_estimator(method: Method, model_config=None, train_config=None):
    from .estimators import AMFTTClassifier, IFIALClassifier, MedianFTTClassifier

    if method.id == IFIAL:
        return IFIALClassifier(k=method.k, model_config=model_config, train_config=train_config)
    if method.id == AM_FTT:
        return AMFTTClassifier(model_config=model_config, train_config=train_config)
    return MedianFTTClassifier(model_config=model_config, train_config=train_config)


def run_method(method: Method, train_rows, test_rows, data: Dataset, mcfg=None, tcfg=None) -> np.ndarray:
    """Fit ``method`` on ``train_rows`` and return class probabilities for ``test_rows``."""
    train_rows = np.asarray(train_rows, dtype=np.intp)
    test_rows = np.asarray(test_rows, dtype=np.intp)
    if np.intersect1d(train_rows, test_rows).size:
        raise ValueError("train and test rows overlap")
    est = make_estimator(method, mcfg, tcfg)
    est.fit(data, rows=train_rows)
    return est.predict_proba(data.take(test_rows))
