"""Cross-validated AUC, rank tables, win matrices, robustness and cost curves."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata
from sklearn.model_selection import StratifiedKFold

from .baselines import Method, make_estimator
from .data import Dataset
from .model import ModelConfig
from .partition import partition_count
from .simulate import MECHANISMS, MissingSpec, inject
from .train import TrainConfig

NONE = "none"
NATURAL = "natural"

RESULT_COLUMNS = ("dataset", "method", "mechanism", "rate", "fold", "seed", "auc")


@dataclass(frozen=True)
class FoldResult:
    dataset: str
    method: str
    mechanism: str
    rate: float
    fold: int
    seed: int
    auc: float

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc {self.auc} outside [0, 1]")

    def key(self):
        return (self.dataset, self.method, self.mechanism, self.rate, self.seed, self.fold)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outscores negative), ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D sequences")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = scores.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # average 1-based rank over each run of equal scores
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [scores.size]))
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def auc_multiclass(proba, labels, class_count: int | None = None) -> float:
    """Macro one-vs-rest AUC over the classes present in ``labels``."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels)
    if proba.ndim != 2:
        raise ValueError("proba must be a (n, classes) matrix")
    class_count = proba.shape[1] if class_count is None else class_count
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("auc needs at least two classes present")
    if class_count == 2:
        return auc(proba[:, 1], (labels == 1).astype(int))
    return float(np.mean([auc(proba[:, c], (labels == c).astype(int)) for c in present]))


def stratified_folds(labels, folds: int, seed: int):
    labels = np.asarray(labels)
    _, counts = np.unique(labels, return_counts=True)
    if counts.min() < folds:
        raise ValueError(f"a class has {counts.min()} rows, fewer than {folds} folds")
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return [(np.sort(tr), np.sort(te)) for tr, te in splitter.split(np.zeros(labels.size), labels)]


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def simulated(data: Dataset, mechanism: str, rate: float, seed: int) -> Dataset:
    if mechanism in MECHANISMS:
        return inject(data, MissingSpec(mechanism, rate, seed))
    if mechanism in (NONE, NATURAL):
        return data
    raise ValueError(f"unknown mechanism {mechanism!r}")


def run_fold(data, method: Method, train_rows, test_rows, mcfg, tcfg, seed: int, fold: int) -> float:
    s = fold_seed(seed, fold)
    mcfg = replace(mcfg or ModelConfig.desk(), seed=s)
    tcfg = replace(tcfg or TrainConfig.desk(), seed=s)
    est = make_estimator(method, mcfg, tcfg)
    est.fit(data, rows=train_rows)
    proba = est.predict_proba(data.take(test_rows))
    return auc_multiclass(proba, data.labels[test_rows], data.class_count)


def cross_validate(data: Dataset, method: Method, mechanism: str, rate: float, folds: int = 5,
                   seeds=(0,), mcfg=None, tcfg=None, dataset_id: str | None = None) -> list[FoldResult]:
    """Stratified k-fold AUC for one method and missingness scenario.

    Missingness is injected into the whole table once per seed, before the
    folds are cut. ``mechanism`` is ``mcar``/``mnar``, ``none`` (complete
    reference data, rate 0) or ``natural`` (use the data as loaded).
    """
    if mechanism in (NONE, NATURAL):
        rate = 0.0 if mechanism == NONE else float(data.missing.mean())
    results = []
    for seed in seeds:
        masked = simulated(data, mechanism, rate, seed)
        for fold, (train_rows, test_rows) in enumerate(stratified_folds(data.labels, folds, seed)):
            score = run_fold(masked, method, train_rows, test_rows, mcfg, tcfg, seed, fold)
            results.append(FoldResult(dataset_id or data.name, method.label, mechanism, rate, fold, seed, score))
    return results


def poison(data: Dataset, rows) -> Dataset:
    """Copy of ``data`` whose ``rows`` hold trap values: NaN for numerical cells,
    out-of-range codes for categorical ones, and no missing flags. Any read
    of these cells while fitting changes or breaks the result."""
    rows = np.asarray(rows, dtype=np.intp)
    values = data.values.copy()
    missing = data.missing.copy()
    cat = data.categorical_mask()
    values[np.ix_(rows, np.flatnonzero(~cat))] = np.nan
    values[np.ix_(rows, np.flatnonzero(cat))] = 1e9
    missing[rows] = False
    return data.with_cells(values, missing)


def leakage_check(data: Dataset, method: Method, train_rows, test_rows, mcfg=None, tcfg=None) -> bool:
    """True when fitting on ``train_rows`` is byte-identical with test rows poisoned."""
    fingerprints = []
    for source in (data, poison(data, test_rows)):
        est = make_estimator(method, mcfg, tcfg)
        try:
            est.fit(source, rows=train_rows)
        except (ValueError, FloatingPointError):
            # a trap value was read and rejected
            return False
        fingerprints.append(est.to_checkpoint())
    return fingerprints[0] == fingerprints[1]


def _scenario_means(results):
    """Mean AUC over folds and seeds keyed by (dataset, mechanism, rate) -> method."""
    acc = defaultdict(list)
    for r in results:
        acc[(r.dataset, r.mechanism, r.rate, r.method)].append(r.auc)
    grid = defaultdict(dict)
    for (ds, mech, rate, method), values in acc.items():
        grid[(ds, mech, rate)][method] = float(np.mean(values))
    methods = sorted({r.method for r in results})
    for scenario, cells in grid.items():
        if set(cells) != set(methods):
            absent = sorted(set(methods) - set(cells))
            raise ValueError(f"scenario {scenario} lacks results for {absent}")
    return dict(grid), methods


@dataclass
class RankTable:
    methods: list[str]
    scenario_ranks: dict
    summary: dict

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "summary": [
                {"mechanism": mech, "rate": rate, "datasets": entry["datasets"],
                 "mean": entry["mean"], "std": entry["std"]}
                for (mech, rate), entry in sorted(self.summary.items())
            ],
            "scenarios": [
                {"dataset": ds, "mechanism": mech, "rate": rate, "ranks": ranks}
                for (ds, mech, rate), ranks in sorted(self.scenario_ranks.items())
            ],
        }


def rank_table(results) -> RankTable:
    """Average rank per method for every (mechanism, rate); rank 1 is the best AUC."""
    grid, methods = _scenario_means(results)
    scenario_ranks = {}
    per_group = defaultdict(lambda: defaultdict(list))
    for (ds, mech, rate), cells in grid.items():
        ranks = rankdata([-cells[m] for m in methods], method="average")
        scenario_ranks[(ds, mech, rate)] = {m: float(r) for m, r in zip(methods, ranks)}
        for m, r in zip(methods, ranks):
            per_group[(mech, rate)][m].append(float(r))
    summary = {}
    for group, by_method in per_group.items():
        count = len(next(iter(by_method.values())))
        summary[group] = {
            "datasets": count,
            "mean": {m: float(np.mean(v)) for m, v in by_method.items()},
            "std": {m: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for m, v in by_method.items()},
        }
    return RankTable(methods, scenario_ranks, summary)


@dataclass
class WinMatrix:
    methods: list[str]
    wins: np.ndarray
    ties: np.ndarray
    scenario_count: int

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "scenario_count": self.scenario_count,
            "wins": self.wins.tolist(),
            "ties": self.ties.tolist(),
        }


def win_matrix(results) -> WinMatrix:
    """Fraction of scenarios where the row method's mean AUC strictly beats the column's.

    Ties count for neither side; a scenario is a (dataset, mechanism, rate)
    cell, so filter to one mechanism for per-mechanism matrices.
    """
    grid, methods = _scenario_means(results)
    M = len(methods)
    wins = np.zeros((M, M))
    ties = np.zeros((M, M))
    for cells in grid.values():
        a = np.array([cells[m] for m in methods])
        wins += a[:, None] > a[None, :]
        ties += a[:, None] == a[None, :]
    S = len(grid)
    np.fill_diagonal(ties, 0.0)
    return WinMatrix(methods, wins / S, ties / S, S)


def robustness_curve(results, reference_results) -> list[dict]:
    """Mean over datasets of 100 * AUC(rate) / AUC(complete data), per method and rate."""
    ref = defaultdict(list)
    for r in reference_results:
        ref[(r.dataset, r.method)].append(r.auc)
    ref = {key: float(np.mean(v)) for key, v in ref.items()}
    acc = defaultdict(list)
    for r in results:
        acc[(r.dataset, r.method, r.mechanism, r.rate)].append(r.auc)
    curves = defaultdict(list)
    for (ds, method, mech, rate), values in acc.items():
        if (ds, method) not in ref:
            raise ValueError(f"no reference AUC for dataset {ds!r}, method {method!r}")
        curves[(method, mech, rate)].append(100.0 * float(np.mean(values)) / ref[(ds, method)])
    rows = []
    for method, mech in sorted({(m, mech) for m, mech, _ in curves}):
        rows.append({"method": method, "mechanism": mech, "rate": 0.0, "percent": 100.0})
        for (m, me, rate), values in sorted(curves.items()):
            if m == method and me == mech:
                rows.append({"method": method, "mechanism": mech, "rate": rate, "percent": float(np.mean(values))})
    return rows


SCORE_ONLY = "score_only"
ATTENTION_ONLY = "attention_only"
FULL = "full"
COST_MODES = (SCORE_ONLY, ATTENTION_ONLY, FULL)


@dataclass(frozen=True)
class CostModel:
    """Forward multiply counts per encoder pass.

    ``score_only`` counts just the attention score/value products over the
    ``m`` feature tokens; ``attention_only`` adds the CLS token and the
    Q/K/V/output projections; ``full`` adds the feed-forward block.
    """

    model_dim: int = 128
    ffn_dim: int = 2048
    num_layers: int = 2
    num_heads: int = 8
    mode: str = SCORE_ONLY

    def __post_init__(self):
        if min(self.model_dim, self.ffn_dim, self.num_layers, self.num_heads) <= 0:
            raise ValueError("cost model dimensions must be positive")
        if self.mode not in COST_MODES:
            raise ValueError(f"mode must be one of {COST_MODES}")

    def ops(self, m: int) -> float:
        D = self.model_dim
        head_dim = D / self.num_heads
        if self.mode == SCORE_ONLY:
            per_layer = self.num_heads * m * m * head_dim * 2
        else:
            L = m + 1
            per_layer = self.num_heads * L * L * head_dim * 2 + 4 * L * D * D
            if self.mode == FULL:
                per_layer += 2 * L * D * self.ffn_dim
        return float(self.num_layers * per_layer)


def cost_ratio(d: int, k: int, cm: CostModel | None = None) -> float:
    """Incremental cost P(k) * C(k) relative to one full-feature pass C(d)."""
    cm = cm or CostModel()
    if not 2 <= k <= d:
        raise ValueError(f"k must satisfy 2 <= k <= d, got k={k}, d={d}")
    return partition_count(d, k) * cm.ops(k) / cm.ops(d)


def cost_curve(d: int, kmin: int = 2, kmax: int | None = None, cm: CostModel | None = None) -> list[dict]:
    kmax = d if kmax is None else kmax
    return [
        {"d": d, "k": k, "P": partition_count(d, k), "ratio": cost_ratio(d, k, cm)}
        for k in range(max(2, kmin), min(kmax, d) + 1)
    ]


def crossover_k(d: int, cm: CostModel | None = None) -> int | None:
    """Largest k below which every smaller partition size is cheaper than k=d."""
    best = None
    for k in range(2, d):
        if cost_ratio(d, k, cm) < 1.0:
            best = k
        else:
            break
    return best


def aggregate_auc(results) -> dict:
    acc = defaultdict(list)
    for r in results:
        acc[(r.dataset, r.method, r.mechanism, r.rate)].append(r.auc)
    return {key: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0) for key, v in acc.items()}
