"""scikit-learn style classifiers wrapping the incremental trainer.

``X`` may be a :class:`~ifial.data.Dataset` (labels inside, ``y`` ignored)
or a float array where NaN marks a missing cell.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .baselines import impute_median
from .data import Dataset, FeatureStats, compute_stats, from_arrays, standardize
from .model import ModelConfig, dump_checkpoint, load_checkpoint
from .partition import PartitionPlan, build_plan, default_k
from .train import TrainConfig, predict, train_ifial


def as_dataset(X, y=None, reference: Dataset | None = None) -> Dataset:
    """Validate ``X``/``y`` and return a :class:`Dataset`.

    With ``reference`` (prediction time) labels may be absent and the
    column layout must match the reference schema.
    """
    if isinstance(X, Dataset):
        data = X
    else:
        arr = np.asarray(X, dtype=np.float64)
        if reference is not None:
            if arr.ndim != 2 or arr.shape[1] != reference.d:
                raise ValueError(f"X has {arr.shape[-1]} columns, expected {reference.d}")
            missing = np.isnan(arr)
            return replace(
                reference,
                values=np.where(missing, 0.0, arr),
                missing=missing,
                labels=np.zeros(arr.shape[0], dtype=np.int64),
            )
        if y is None:
            raise ValueError("y is required when X is an array")
        data = from_arrays(arr, y)
    if reference is not None and data.feature_names != reference.feature_names:
        raise ValueError("feature columns differ from those seen in fit")
    return data


class FTTClassifierBase(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses choose partitioning and imputation."""

    _impute = False
    _mask_missing = True

    def __init__(self, model_config: ModelConfig | None = None, train_config: TrainConfig | None = None):
        self.model_config = model_config
        self.train_config = train_config

    def _partition_size(self, d: int) -> int:
        return d

    def _prepare(self, data: Dataset, stats: FeatureStats) -> Dataset:
        if self._impute:
            data = impute_median(data, stats)
        return standardize(data, stats)

    def fit(self, X, y=None, rows=None):
        """Fit on ``X``; ``rows`` restricts training to a subset of a :class:`Dataset`.

        Cells outside ``rows`` are never read while fitting.
        """
        data = as_dataset(X, y)
        rows = np.arange(data.n) if rows is None else np.asarray(rows, dtype=np.intp)
        stats = compute_stats(data, rows)
        prepared = self._prepare(data, stats)
        mcfg = replace(self.model_config or ModelConfig.desk(), class_count=data.class_count)
        tcfg = self.train_config or TrainConfig.desk()
        plan = build_plan(stats, min(self._partition_size(data.d), data.d))
        state, logs = train_ifial(prepared, plan, mcfg, tcfg, rows=rows, mask_missing=self._mask_missing)
        self.stats_ = stats
        self.plan_ = plan
        self.state_ = state
        self.session_logs_ = logs
        self.classes_ = np.arange(data.class_count)
        self.class_names_ = tuple(data.class_names)
        self.feature_names_in_ = np.array(data.feature_names, dtype=object)
        self.n_features_in_ = data.d
        self.reference_ = data.take([])
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        data = as_dataset(X, reference=self.reference_)
        return predict(self.state_, self._prepare(data, self.stats_))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def decision_scores(self, X) -> np.ndarray:
        """Positive-class probability for binary tasks, the full matrix otherwise."""
        proba = self.predict_proba(X)
        return proba[:, 1] if proba.shape[1] == 2 else proba

    def to_checkpoint(self) -> bytes:
        check_is_fitted(self, "state_")
        extra = {
            "estimator": type(self).__name__,
            "stats": self.stats_.to_dict(),
            "plan": self.plan_.to_dict(),
            "class_names": list(self.class_names_),
            "schema": [
                {"name": f.name, "kind": f.kind, "categories": list(f.categories)} for f in self.reference_.schema
            ],
            "target_name": self.reference_.target_name,
            "train_config": None if self.train_config is None else vars(self.train_config),
        }
        if hasattr(self, "k"):
            extra["k"] = self.k
        return dump_checkpoint(self.state_, extra)

    @classmethod
    def from_checkpoint(cls, raw: bytes) -> FTTClassifierBase:
        from .data import FeatureSchema

        state, extra = load_checkpoint(raw)
        target = {
            "IFIALClassifier": IFIALClassifier,
            "AMFTTClassifier": AMFTTClassifier,
            "MedianFTTClassifier": MedianFTTClassifier,
        }.get(extra.get("estimator"), cls)
        est = target.__new__(target)
        tcfg = extra.get("train_config")
        params = {"model_config": state.config, "train_config": None if tcfg is None else TrainConfig(**tcfg)}
        if target is IFIALClassifier:
            params["k"] = extra.get("k")
        est.__dict__.update(params)
        schema = tuple(FeatureSchema(c["name"], c["kind"], list(c["categories"])) for c in extra["schema"])
        names = tuple(extra["class_names"])
        est.stats_ = FeatureStats.from_dict(extra["stats"])
        est.plan_ = PartitionPlan.from_dict(extra["plan"])
        est.state_ = state
        est.session_logs_ = []
        est.classes_ = np.arange(len(names))
        est.class_names_ = names
        est.feature_names_in_ = np.array([f.name for f in schema], dtype=object)
        est.n_features_in_ = len(schema)
        est.reference_ = Dataset(
            schema=schema,
            values=np.zeros((0, len(schema))),
            missing=np.zeros((0, len(schema)), dtype=bool),
            labels=np.zeros(0, dtype=np.int64),
            class_names=names,
            target_name=extra.get("target_name", "target"),
        )
        return est


class IFIALClassifier(FTTClassifierBase):
    """Incremental training over overlapping windows of ``k`` features.

    ``k=None`` uses ``ceil(d/2)``.
    """

    def __init__(self, k: int | None = None, model_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None):
        self.k = k
        self.model_config = model_config
        self.train_config = train_config

    def _partition_size(self, d: int) -> int:
        return default_k(d) if self.k is None else self.k


class AMFTTClassifier(FTTClassifierBase):
    """Attention-masked transformer on all features in a single session."""


class MedianFTTClassifier(FTTClassifierBase):
    """Median/mode imputation followed by the same transformer without masks."""

    _impute = True
    _mask_missing = False
