"""Incremental training over partition windows (one session per window)."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .model import ModelConfig, ModelState, forward, loss_and_grad, softmax, tokenize
from .partition import PartitionPlan, full_view, partition_view

logger = logging.getLogger(__name__)

FULL_BUDGET = "full_budget"
DIVIDED = "divided"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 0.0
    max_epochs: int = 300
    batch_size: int = 128
    patience: int = 50
    val_fraction: float = 0.15
    seed: int = 0
    epochs_per_session: str = FULL_BUDGET
    reset_moments: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5)")
        if self.epochs_per_session not in (FULL_BUDGET, DIVIDED):
            raise ValueError("epochs_per_session must be full_budget or divided")

    @classmethod
    def full_scale(cls, **overrides) -> TrainConfig:
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> TrainConfig:
        base = dict(learning_rate=1e-3, max_epochs=100, batch_size=32, patience=15)
        base.update(overrides)
        return cls(**base)


@dataclass
class SessionLog:
    window: int
    features: list[str]
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    early_stopped: bool
    wall_time: float

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with L2 weight decay, stepping only the keys it was given."""

    def __init__(self, keys, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.keys = list(keys)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def reset(self, keys=None) -> None:
        if keys is not None:
            self.keys = list(keys)
        self.t = 0
        self.m.clear()
        self.v.clear()

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for key in self.keys:
            g = grads[key]
            if self.weight_decay:
                g = g + self.weight_decay * params[key]
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def validation_split(labels: np.ndarray, rows: np.ndarray, fraction: float, rng: np.random.Generator):
    """Stratified (train, val) split of ``rows``; falls back to a plain split for tiny classes."""
    rows = np.asarray(rows, dtype=np.intp)
    y = labels[rows]
    classes, counts = np.unique(y, return_counts=True)
    if counts.min() < 2:
        warnings.warn("a class has fewer than 2 training rows; using a non-stratified validation split", stacklevel=2)
        perm = rng.permutation(rows.size)
        n_val = max(1, int(round(fraction * rows.size)))
        return np.sort(rows[perm[n_val:]]), np.sort(rows[perm[:n_val]])
    val = []
    for c in classes:
        members = rows[y == c]
        members = members[rng.permutation(members.size)]
        n_val = min(max(1, int(round(fraction * members.size))), members.size - 1)
        val.append(members[:n_val])
    val = np.sort(np.concatenate(val))
    train = np.setdiff1d(rows, val)
    return train, val


def evaluate_loss(state: ModelState, view, rows, labels, batch_size: int = 512) -> float:
    total = 0.0
    for start in range(0, len(rows), batch_size):
        chunk = rows[start : start + batch_size]
        logits = forward(tokenize(view, state, chunk), state, train_mode=False)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        total -= logp[np.arange(chunk.size), labels[chunk]].sum()
    return total / len(rows)


def train_ifial(
    data: Dataset,
    plan: PartitionPlan,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    rows=None,
    state: ModelState | None = None,
    mask_missing: bool = True,
    on_tokenize=None,
):
    """Train one shared model on each window of ``plan`` in order.

    ``rows`` restricts training to a subset (the training fold); nothing
    outside it is read. Returns ``(state, session_logs)``.
    ``mask_missing=False`` requires a dataset without missing cells.
    ``on_tokenize(window_index, feature_names)`` is an instrumentation hook.
    """
    rows = np.arange(data.n) if rows is None else np.asarray(rows, dtype=np.intp)
    if not mask_missing and data.missing[rows].any():
        raise ValueError("mask_missing=False needs complete data")
    if mcfg.class_count != data.class_count:
        raise ValueError("model class_count does not match the dataset")
    rng = np.random.default_rng(tcfg.seed)
    train_rows, val_rows = validation_split(data.labels, rows, tcfg.val_fraction, rng)
    state = ModelState.init(mcfg) if state is None else state
    labels = data.labels
    epochs = tcfg.max_epochs
    if tcfg.epochs_per_session == DIVIDED:
        epochs = max(1, tcfg.max_epochs // plan.P)
    patience = min(tcfg.patience, epochs)
    optimizer = None
    logs = []
    for i in range(plan.P):
        view = partition_view(data, plan, i)
        start_time = time.perf_counter()
        for feat in view.schema:
            state.register(feat)
        active = state.shared_keys() + [key for name in view.feature_names for key in state.feature_keys(name)]
        if optimizer is None:
            optimizer = Adam(active, tcfg.learning_rate, tcfg.weight_decay)
        elif tcfg.reset_moments:
            optimizer.reset(active)
        else:
            optimizer.keys = active
        if on_tokenize is not None:
            on_tokenize(i, view.feature_names)
        best_loss = evaluate_loss(state, view, val_rows, labels)
        best_params = {key: state.params[key].copy() for key in active}
        best_epoch = 0
        epoch = 0
        stopped = False
        while epoch < epochs:
            epoch += 1
            order = train_rows[rng.permutation(train_rows.size)]
            for start in range(0, order.size, tcfg.batch_size):
                batch_rows = order[start : start + tcfg.batch_size]
                batch = tokenize(view, state, batch_rows)
                _, grads = loss_and_grad(batch, labels[batch_rows], state, rng=rng)
                optimizer.step(state.params, grads)
            val_loss = evaluate_loss(state, view, val_rows, labels)
            if not np.isfinite(val_loss):
                raise FloatingPointError(f"non-finite validation loss in session {i}, epoch {epoch}")
            if val_loss < best_loss:
                best_loss, best_epoch = val_loss, epoch
                best_params = {key: state.params[key].copy() for key in active}
            elif epoch - best_epoch >= patience:
                stopped = True
                break
        for key, val in best_params.items():
            state.params[key] = val
        logs.append(
            SessionLog(
                window=i,
                features=view.feature_names,
                epochs_run=epoch,
                best_epoch=best_epoch,
                best_val_loss=float(best_loss),
                early_stopped=stopped,
                wall_time=time.perf_counter() - start_time,
            )
        )
        logger.debug("session %d: %d epochs, best %.4f at %d", i, epoch, best_loss, best_epoch)
    return state, logs


def predict(state: ModelState, data: Dataset, rows=None, columns=None, batch_size: int = 512) -> np.ndarray:
    """Class probabilities using every feature of ``data`` (dropout off).

    Features the model never saw are tokenized as missing, with a warning.
    """
    rows = np.arange(data.n) if rows is None else np.asarray(rows, dtype=np.intp)
    view = full_view(data, columns)
    unseen = [f.name for f in view.schema if f.name not in state.features]
    if unseen:
        warnings.warn(f"features never seen in training are treated as missing: {unseen}", stacklevel=2)
    out = np.zeros((rows.size, state.config.class_count))
    for start in range(0, rows.size, batch_size):
        chunk = rows[start : start + batch_size]
        batch = tokenize(view, state, chunk, frozen=True, unknown="missing")
        out[start : start + chunk.size] = softmax(forward(batch, state, train_mode=False))
    return out
