"""Tabular data with explicit per-cell missingness.

A :class:`Dataset` keeps feature values in a float64 matrix alongside a boolean
``missing`` matrix. The value stored under a missing cell is meaningless and is
never read: every consumer goes through the mask, so an observed ``0.0`` can
never be confused with a missing entry.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"
TARGET = "target"


class DataError(ValueError):
    """Raised for malformed data or schema files."""


@dataclass
class FeatureSchema:
    name: str
    kind: str
    categories: list[str] = field(default_factory=list)
    role: str = "feature"

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of ``n`` rows by ``d`` feature columns plus labels.

    ``values[i, j]`` holds the standardized/raw number for numerical columns
    and the category index for categorical columns; it is only meaningful
    where ``missing[i, j]`` is False.
    """

    schema: tuple[FeatureSchema, ...]
    values: np.ndarray
    missing: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    name: str = "dataset"
    target_name: str = "target"

    def __post_init__(self):
        n, d = self.values.shape
        if self.missing.shape != (n, d):
            raise DataError("missing mask shape does not match values")
        if len(self.schema) != d:
            raise DataError(f"schema has {len(self.schema)} features, values have {d}")
        if self.labels.shape != (n,):
            raise DataError("labels must be a length-n vector")
        if len(self.class_names) < 2:
            raise DataError("class_count must be at least 2")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("labels outside [0, class_count)")
        for arr in (self.values, self.missing, self.labels):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.schema], dtype=bool)

    def has_missing(self) -> bool:
        return bool(self.missing.any())

    def with_cells(self, values: np.ndarray, missing: np.ndarray | None = None) -> Dataset:
        return replace(
            self,
            values=np.array(values, dtype=np.float64),
            missing=np.array(self.missing if missing is None else missing, dtype=bool),
        )

    def take(self, rows) -> Dataset:
        rows = np.asarray(rows, dtype=np.intp)
        return replace(
            self,
            values=self.values[rows].copy(),
            missing=self.missing[rows].copy(),
            labels=self.labels[rows].copy(),
        )

    def cell(self, i: int, j: int):
        """Return the tagged cell: ``None`` for missing, a float or category index otherwise."""
        if self.missing[i, j]:
            return None
        v = self.values[i, j]
        return int(v) if self.schema[j].is_categorical else float(v)


@dataclass
class FeatureStats:
    """Per-feature statistics over a row subset (normally a training fold)."""

    names: list[str]
    missing_rate: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    median: np.ndarray
    mode: np.ndarray
    observed_count: np.ndarray
    categorical: np.ndarray

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "missing_rate": self.missing_rate.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "median": self.median.tolist(),
            "mode": self.mode.tolist(),
            "observed_count": self.observed_count.tolist(),
            "categorical": self.categorical.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> FeatureStats:
        return cls(
            names=list(obj["names"]),
            missing_rate=np.asarray(obj["missing_rate"], dtype=np.float64),
            mean=np.asarray(obj["mean"], dtype=np.float64),
            std=np.asarray(obj["std"], dtype=np.float64),
            median=np.asarray(obj["median"], dtype=np.float64),
            mode=np.asarray(obj["mode"], dtype=np.int64),
            observed_count=np.asarray(obj["observed_count"], dtype=np.int64),
            categorical=np.asarray(obj["categorical"], dtype=bool),
        )


def load_schema(path) -> list[FeatureSchema]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read schema {path}: {exc}") from exc
    return parse_schema(obj)


def parse_schema(obj: dict) -> list[FeatureSchema]:
    if not isinstance(obj, dict) or not isinstance(obj.get("columns"), list):
        raise DataError('schema must be an object with a "columns" list')
    columns = []
    seen = set()
    for i, col in enumerate(obj["columns"]):
        name = col.get("name") if isinstance(col, dict) else None
        kind = col.get("kind") if isinstance(col, dict) else None
        if not isinstance(name, str) or not name:
            raise DataError(f"columns[{i}].name must be a non-empty string")
        if name in seen:
            raise DataError(f"duplicate column name {name!r}")
        seen.add(name)
        if kind not in (NUMERICAL, CATEGORICAL, TARGET):
            raise DataError(f"columns[{i}].kind must be numerical, categorical or target")
        cats = col.get("categories", [])
        if not isinstance(cats, list) or any(not isinstance(c, str) for c in cats):
            raise DataError(f"columns[{i}].categories must be a list of strings")
        if len(set(cats)) != len(cats):
            raise DataError(f"columns[{i}].categories has duplicates")
        role = TARGET if kind == TARGET else "feature"
        columns.append(FeatureSchema(name, kind, list(cats), role))
    if sum(c.role == TARGET for c in columns) != 1:
        raise DataError("schema needs exactly one target column")
    return columns


def load_csv(path, schema_path, name: str | None = None) -> Dataset:
    """Read a CSV file typed by a JSON schema; empty cells become missing."""
    columns = load_schema(schema_path)
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}: line 1: {exc}") from exc
        by_name = {c.name: c for c in columns}
        if sorted(header) != sorted(by_name):
            raise DataError(f"{path}: header {header} does not match schema columns")
        rows = []
        try:
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise DataError(
                        f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
                    )
                rows.append((reader.line_num, row))
        except csv.Error as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from exc

    features = [c for c in columns if c.role == "feature"]
    target = next(c for c in columns if c.role == TARGET)
    pos = {h: i for i, h in enumerate(header)}
    n, d = len(rows), len(features)
    values = np.zeros((n, d), dtype=np.float64)
    missing = np.zeros((n, d), dtype=bool)
    cat_index = [{c: i for i, c in enumerate(f.categories)} for f in features]
    raw_targets = []
    for i, (line, row) in enumerate(rows):
        for j, feat in enumerate(features):
            text = row[pos[feat.name]]
            if text == "":
                missing[i, j] = True
            elif feat.is_categorical:
                index = cat_index[j]
                if text not in index:
                    index[text] = len(feat.categories)
                    feat.categories.append(text)
                values[i, j] = index[text]
            else:
                try:
                    values[i, j] = float(text)
                except ValueError:
                    raise DataError(
                        f"{path}: line {line}, column {feat.name!r}: cannot parse {text!r} as a number"
                    ) from None
                if not math.isfinite(values[i, j]):
                    raise DataError(f"{path}: line {line}, column {feat.name!r}: non-finite value")
        label = row[pos[target.name]]
        if label == "":
            raise DataError(f"{path}: line {line}: missing target value")
        raw_targets.append(label)

    class_names = list(target.categories)
    for label in sorted(set(raw_targets) - set(class_names)):
        class_names.append(label)
    target.categories = class_names
    label_index = {c: i for i, c in enumerate(class_names)}
    labels = np.array([label_index[t] for t in raw_targets], dtype=np.int64)
    for feat in features:
        if feat.is_categorical and not feat.categories:
            feat.categories.append("")  # all-missing column still needs a vocabulary
    return Dataset(
        schema=tuple(features),
        values=values,
        missing=missing,
        labels=labels,
        class_names=tuple(class_names),
        name=name or path.stem,
        target_name=target.name,
    )


def schema_dict(data: Dataset) -> dict:
    cols = [
        {"name": f.name, "kind": f.kind, **({"categories": list(f.categories)} if f.is_categorical else {})}
        for f in data.schema
    ]
    cols.append({"name": data.target_name, "kind": TARGET, "categories": list(data.class_names)})
    return {"columns": cols}


def write_csv(data: Dataset, path, schema_path=None) -> None:
    """Write ``data`` as CSV (missing cells as empty strings), optionally with its schema."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(data.feature_names + [data.target_name])
        for i in range(data.n):
            row = []
            for j, feat in enumerate(data.schema):
                if data.missing[i, j]:
                    row.append("")
                elif feat.is_categorical:
                    row.append(feat.categories[int(data.values[i, j])])
                else:
                    row.append(repr(float(data.values[i, j])))
            row.append(data.class_names[data.labels[i]])
            writer.writerow(row)
    if schema_path is not None:
        Path(schema_path).write_text(json.dumps(schema_dict(data), indent=2) + "\n", encoding="utf-8")


def compute_stats(data: Dataset, row_subset: Sequence[int]) -> FeatureStats:
    """Missing rates, moments, medians and modes over ``row_subset`` only."""
    rows = np.asarray(row_subset, dtype=np.intp)
    if rows.size == 0:
        raise ValueError("compute_stats needs a non-empty row subset")
    if rows.min() < 0 or rows.max() >= data.n:
        raise IndexError("row_subset index out of range")
    vals = data.values[rows]
    miss = data.missing[rows]
    d = data.d
    categorical = data.categorical_mask()
    mean = np.zeros(d)
    std = np.ones(d)
    median = np.zeros(d)
    mode = np.full(d, -1, dtype=np.int64)
    observed = (~miss).sum(axis=0)
    for j in range(d):
        col = vals[~miss[:, j], j]
        if categorical[j]:
            if col.size:
                n_cat = len(data.schema[j].categories)
                if col.min() < 0 or col.max() >= n_cat or np.any(col != np.floor(col)):
                    raise DataError(f"feature {data.schema[j].name!r} holds an invalid category code")
                counts = np.bincount(col.astype(np.int64), minlength=len(data.schema[j].categories))
                mode[j] = int(np.argmax(counts))
            continue
        if col.size:
            mean[j] = col.mean()
            median[j] = np.median(col)
        if col.size >= 2:
            s = col.std(ddof=1)
            std[j] = s if s > 0 else 1.0
    return FeatureStats(
        names=data.feature_names,
        missing_rate=miss.sum(axis=0) / rows.size,
        mean=mean,
        std=std,
        median=median,
        mode=mode,
        observed_count=observed.astype(np.int64),
        categorical=categorical,
    )


def standardize(data: Dataset, stats: FeatureStats) -> Dataset:
    """Z-score observed numerical cells; categorical and missing cells pass through."""
    num = ~stats.categorical
    values = data.values.copy()
    scaled = (values[:, num] - stats.mean[num]) / stats.std[num]
    keep = data.missing[:, num]
    values[:, num] = np.where(keep, values[:, num], scaled)
    return data.with_cells(values)


def from_arrays(X, y, categorical=None, feature_names=None, name="array") -> Dataset:
    """Build a :class:`Dataset` from a float matrix where NaN marks missing cells.

    Categorical columns must hold non-negative integer codes. Labels are
    mapped to class indices in sorted order of their string form.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be two-dimensional")
    n, d = X.shape
    y = np.asarray(y)
    if y.shape != (n,):
        raise DataError("y must have one label per row")
    missing = np.isnan(X)
    if np.isinf(X).any():
        raise DataError("X contains infinite values")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(d)]
    cat = np.zeros(d, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    schema = []
    for j in range(d):
        if cat[j]:
            col = X[~missing[:, j], j]
            if col.size and (np.any(col < 0) or np.any(col != np.round(col))):
                raise DataError(f"categorical column {names[j]!r} must hold integer codes")
            count = int(col.max()) + 1 if col.size else 1
            schema.append(FeatureSchema(names[j], CATEGORICAL, [str(c) for c in range(count)]))
        else:
            schema.append(FeatureSchema(names[j], NUMERICAL))
    classes, labels = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise DataError("need at least two classes")
    return Dataset(
        schema=tuple(schema),
        values=np.where(missing, 0.0, X),
        missing=missing,
        labels=labels.astype(np.int64),
        class_names=tuple(str(c) for c in classes),
        name=name,
    )
