"""Experiment configuration files (versioned JSON, unknown keys rejected)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .baselines import IFIAL, METHOD_IDS, Method
from .model import ACTIVATIONS, ModelConfig
from .simulate import MECHANISMS
from .train import DIVIDED, FULL_BUDGET, TrainConfig

CONFIG_VERSION = 1
HALF_D = "half_d"
NATURAL = "natural"

_TOP_KEYS = {
    "version", "dataset", "methods", "mechanisms", "rates", "k", "model", "train",
    "folds", "seeds", "output_dir", "reference", "save_checkpoints",
}
_DATASET_KEYS = {"path", "schema", "name"}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"class_count", "seed"} | {"preset"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"} | {"preset"}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class ExperimentConfig:
    data_path: Path
    schema_path: Path
    dataset_name: str
    methods: list[str]
    mechanisms: list[str]
    rates: list[float]
    k: int | str = HALF_D
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    folds: int = 5
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("runs")
    reference: bool = True
    save_checkpoints: bool = False
    raw: dict = field(default_factory=dict)

    def method_objects(self, d: int) -> list[Method]:
        out = []
        for m in self.methods:
            if m == IFIAL:
                out.append(Method(IFIAL, None if self.k == HALF_D else min(int(self.k), d)))
            else:
                out.append(Method(m))
        return out

    def model_config(self) -> ModelConfig:
        opts = dict(self.model)
        preset = opts.pop("preset", "desk")
        return ModelConfig.desk(**opts) if preset == "desk" else ModelConfig.full_scale(**opts)

    def train_config(self) -> TrainConfig:
        opts = dict(self.train)
        preset = opts.pop("preset", "desk")
        return TrainConfig.desk(**opts) if preset == "desk" else TrainConfig.full_scale(**opts)

    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, "must be an object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _number(value, path, integer=False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        raise ConfigError(path, "must be an integer" if integer else "must be a number")
    return value


def parse_config(obj: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Validate a decoded config object; relative paths resolve against ``base_dir``."""
    _check_keys(obj, _TOP_KEYS, "")
    if obj.get("version") != CONFIG_VERSION:
        raise ConfigError("version", f"must be {CONFIG_VERSION}")
    for key in ("dataset", "methods", "rates", "seeds"):
        if key not in obj:
            raise ConfigError(key, "is required")

    ds = obj["dataset"]
    _check_keys(ds, _DATASET_KEYS, "dataset")
    for key in ("path", "schema"):
        if not isinstance(ds.get(key), str):
            raise ConfigError(f"dataset.{key}", "must be a path string")
    data_path = (base_dir / ds["path"]).resolve()
    schema_path = (base_dir / ds["schema"]).resolve()

    methods = obj["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "must be a non-empty list")
    for i, m in enumerate(methods):
        if m not in METHOD_IDS:
            raise ConfigError(f"methods[{i}]", f"unknown method {m!r}")
    if len(set(methods)) != len(methods):
        raise ConfigError("methods", "duplicate entries")

    mechanisms = obj.get("mechanisms", ["mcar"])
    if not isinstance(mechanisms, list) or not mechanisms:
        raise ConfigError("mechanisms", "must be a non-empty list")
    for i, m in enumerate(mechanisms):
        if m not in MECHANISMS + (NATURAL,):
            raise ConfigError(f"mechanisms[{i}]", f"unknown mechanism {m!r}")

    rates = obj["rates"]
    if not isinstance(rates, list) or not rates:
        raise ConfigError("rates", "must be a non-empty list")
    for i, r in enumerate(rates):
        _number(r, f"rates[{i}]")
        if not 0.0 < r < 1.0:
            raise ConfigError(f"rates[{i}]", f"must lie strictly between 0 and 1, got {r}")

    k = obj.get("k", HALF_D)
    if k != HALF_D:
        _number(k, "k", integer=True)
        if k < 2:
            raise ConfigError("k", "must be at least 2 or \"half_d\"")

    model = obj.get("model", {})
    _check_keys(model, _MODEL_KEYS, "model")
    if model.get("preset", "desk") not in ("desk", "full"):
        raise ConfigError("model.preset", "must be desk or full")
    if "activation" in model and model["activation"] not in ACTIVATIONS:
        raise ConfigError("model.activation", f"must be one of {ACTIVATIONS}")
    train = obj.get("train", {})
    _check_keys(train, _TRAIN_KEYS, "train")
    if train.get("preset", "desk") not in ("desk", "full"):
        raise ConfigError("train.preset", "must be desk or full")
    if train.get("epochs_per_session", FULL_BUDGET) not in (FULL_BUDGET, DIVIDED):
        raise ConfigError("train.epochs_per_session", "must be full_budget or divided")

    folds = obj.get("folds", 5)
    _number(folds, "folds", integer=True)
    if folds < 2:
        raise ConfigError("folds", "must be at least 2")

    seeds = obj["seeds"]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "must be a non-empty list")
    for i, s in enumerate(seeds):
        _number(s, f"seeds[{i}]", integer=True)
        if s < 0:
            raise ConfigError(f"seeds[{i}]", "must be non-negative")

    for key in ("reference", "save_checkpoints"):
        if key in obj and not isinstance(obj[key], bool):
            raise ConfigError(key, "must be true or false")
    out_dir = obj.get("output_dir", "runs")
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir", "must be a path string")

    cfg = ExperimentConfig(
        data_path=data_path,
        schema_path=schema_path,
        dataset_name=ds.get("name") or data_path.stem,
        methods=list(methods),
        mechanisms=list(mechanisms),
        rates=[float(r) for r in rates],
        k=k,
        model=dict(model),
        train=dict(train),
        folds=folds,
        seeds=list(seeds),
        output_dir=(base_dir / out_dir).resolve(),
        reference=obj.get("reference", True),
        save_checkpoints=obj.get("save_checkpoints", False),
        raw=obj,
    )
    # surface invariant violations of the model/train blocks with their paths
    for name, build in (("model", cfg.model_config), ("train", cfg.train_config)):
        try:
            build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(name, str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from exc
    return parse_config(obj, path.parent)
