"""Command-line entry point: ``ifial run|simulate|partitions|train|predict|cost|report``."""
from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import eval as ev
from .baselines import Method, make_estimator
from .config import NATURAL, ConfigError, ExperimentConfig, load_config
from .data import DataError, load_csv, write_csv
from .estimators import FTTClassifierBase
from .partition import default_k, plan_from_rates
from .simulate import MissingSpec, inject

logger = logging.getLogger("ifial")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MANIFEST = "manifest.json"
CELLS = "cells.jsonl"


class RunRefused(Exception):
    pass


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def deterministic_mode() -> bool:
    return os.environ.get("IFIAL_DETERMINISTIC", "") == "1"


# grid execution -----------------------------------------------------------

_WORKER: dict = {}


def _init_worker(cfg: ExperimentConfig):
    _WORKER["cfg"] = cfg
    _WORKER["data"] = load_csv(cfg.data_path, cfg.schema_path, name=cfg.dataset_name)
    _WORKER["masked"] = functools.lru_cache(maxsize=8)(
        lambda mech, rate, seed: ev.simulated(_WORKER["data"], mech, rate, seed)
    )


def _run_cell(task):
    method_id, k, mech, rate, seed, fold = task
    cfg = _WORKER["cfg"]
    data = _WORKER["masked"](mech, rate, seed)
    train_rows, test_rows = ev.stratified_folds(data.labels, cfg.folds, seed)[fold]
    s = ev.fold_seed(seed, fold)
    est = make_estimator(
        Method(method_id, k),
        replace(cfg.model_config(), seed=s),
        replace(cfg.train_config(), seed=s),
    )
    est.fit(data, rows=train_rows)
    proba = est.predict_proba(data.take(test_rows))
    score = ev.auc_multiclass(proba, data.labels[test_rows], data.class_count)
    record = {
        "dataset": cfg.dataset_name, "method": method_id, "mechanism": mech, "rate": rate,
        "fold": fold, "seed": seed, "auc": score,
        "sessions": [log.to_dict() for log in est.session_logs_],
    }
    ckpt = est.to_checkpoint() if cfg.save_checkpoints else None
    return record, ckpt


def grid_tasks(cfg: ExperimentConfig, data) -> list[tuple]:
    natural = data.has_missing()
    tasks = []
    for method in cfg.method_objects(data.d):
        for mech in cfg.mechanisms:
            if mech == NATURAL:
                if not natural:
                    raise DataError("mechanism 'natural' needs a dataset with missing values")
                rates = [float(data.missing.mean())]
            else:
                if natural:
                    raise DataError(f"dataset already has missing cells; use mechanism 'natural', not {mech!r}")
                rates = cfg.rates
            for rate in rates:
                for seed in cfg.seeds:
                    for fold in range(cfg.folds):
                        tasks.append((method.id, method.k, mech, rate, seed, fold))
        if cfg.reference and not natural:
            for seed in cfg.seeds:
                for fold in range(cfg.folds):
                    tasks.append((method.id, method.k, ev.NONE, 0.0, seed, fold))
    return tasks


def _cell_name(record) -> str:
    return f"{record['method']}_{record['mechanism']}_{record['rate']:.4f}_s{record['seed']}_f{record['fold']}"


def _records_to_results(records) -> list[ev.FoldResult]:
    return [
        ev.FoldResult(r["dataset"], r["method"], r["mechanism"], float(r["rate"]), int(r["fold"]), int(r["seed"]),
                      float(r["auc"]))
        for r in records
    ]


def write_results_csv(results, path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ev.RESULT_COLUMNS)
    for r in sorted(results, key=lambda r: (r.dataset, r.method, r.mechanism, r.rate, r.seed, r.fold)):
        writer.writerow([r.dataset, r.method, r.mechanism, repr(r.rate), r.fold, r.seed, repr(r.auc)])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_results_csv(path) -> list[ev.FoldResult]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != ev.RESULT_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(ev.RESULT_COLUMNS)}")
        try:
            return [
                ev.FoldResult(row["dataset"], row["method"], row["mechanism"], float(row["rate"]),
                              int(row["fold"]), int(row["seed"]), float(row["auc"]))
                for row in reader
            ]
        except ValueError as exc:
            raise DataError(f"{path}: line {reader.line_num}: {exc}") from exc


def write_reports(results, reference, out_dir: Path) -> list[Path]:
    written = []
    if results:
        table = ev.rank_table(results)
        path = out_dir / "rank_table.json"
        path.write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
        matrices = {}
        for mech in sorted({r.mechanism for r in results}):
            matrices[mech] = ev.win_matrix([r for r in results if r.mechanism == mech]).to_dict()
        path = out_dir / "win_matrix.json"
        path.write_text(json.dumps(matrices, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    if results and reference:
        simulated = [r for r in results if r.mechanism != NATURAL]
        if simulated:
            rows = ev.robustness_curve(simulated, reference)
            path = out_dir / "robustness.csv"
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.DictWriter(handle, ["method", "mechanism", "rate", "percent"], lineterminator="\n")
                writer.writeheader()
                for row in rows:
                    writer.writerow({**row, "rate": repr(row["rate"]), "percent": repr(row["percent"])})
            written.append(path)
    return written


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None, jobs: int = 1, resume: bool = False) -> Path:
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells_path = out_dir / CELLS
    run_info = out_dir / "run.json"
    done = {}
    if cells_path.exists() or (out_dir / MANIFEST).exists():
        if not resume:
            raise RunRefused(f"{out_dir} already holds a run; pass --resume to continue it")
        if run_info.exists() and json.loads(run_info.read_text())["config_sha256"] != cfg.digest():
            raise RunRefused(f"{out_dir} was produced by a different config; refusing to resume")
        if cells_path.exists():
            for line in cells_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    done[(rec["method"], rec["mechanism"], rec["rate"], rec["seed"], rec["fold"])] = rec
    run_info.write_text(json.dumps({"config_sha256": cfg.digest(), "config": cfg.raw}, indent=2, sort_keys=True)
                        + "\n", encoding="utf-8")

    _init_worker(cfg)
    data = _WORKER["data"]
    tasks = [t for t in grid_tasks(cfg, data) if (t[0], t[2], t[3], t[4], t[5]) not in done]
    if deterministic_mode():
        jobs = 1
    ckpt_dir = out_dir / "checkpoints"
    if cfg.save_checkpoints:
        ckpt_dir.mkdir(exist_ok=True)
    logger.info("running %d grid cells (%d already done) with %d worker(s)", len(tasks), len(done), jobs)

    def collect(outputs):
        with cells_path.open("a", encoding="utf-8") as handle:
            for record, ckpt in outputs:
                if ckpt is not None:
                    (ckpt_dir / (_cell_name(record) + ".ckpt")).write_bytes(ckpt)
                handle.write(json.dumps(record, sort_keys=True) + "\n")
                handle.flush()
                done[(record["method"], record["mechanism"], record["rate"], record["seed"], record["fold"])] = record
                logger.info("%s auc=%.4f", _cell_name(record), record["auc"])

    if jobs <= 1:
        collect(_run_cell(t) for t in tasks)
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(cfg,)) as pool:
            collect(pool.map(_run_cell, tasks))

    records = list(done.values())
    main = _records_to_results([r for r in records if r["mechanism"] != ev.NONE])
    reference = _records_to_results([r for r in records if r["mechanism"] == ev.NONE])
    write_results_csv(main, out_dir / "results.csv")
    outputs = [out_dir / "results.csv"]
    if reference:
        write_results_csv(reference, out_dir / "reference.csv")
        outputs.append(out_dir / "reference.csv")
    outputs += write_reports(main, reference, out_dir)
    logs_path = out_dir / "session_logs.jsonl"
    with logs_path.open("w", encoding="utf-8") as handle:
        for rec in sorted(records, key=lambda r: (r["method"], r["mechanism"], r["rate"], r["seed"], r["fold"])):
            handle.write(json.dumps({"cell": _cell_name(rec), "sessions": rec["sessions"]}, sort_keys=True) + "\n")
    outputs += [logs_path, cells_path, run_info]
    if cfg.save_checkpoints:
        outputs += sorted(ckpt_dir.glob("*.ckpt"))
    write_manifest(out_dir, cfg, outputs)
    return out_dir


def write_manifest(out_dir: Path, cfg: ExperimentConfig, outputs) -> None:
    manifest = {
        "config_sha256": cfg.digest(),
        "seeds": cfg.seeds,
        "deterministic": deterministic_mode(),
        "files": {str(p.relative_to(out_dir)): sha256_file(p) for p in outputs},
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def verify_manifest(path: Path) -> bool | None:
    """True/False when a sibling manifest lists ``path``; None when there is none."""
    manifest = path.parent / MANIFEST
    if not manifest.exists():
        return None
    files = json.loads(manifest.read_text(encoding="utf-8")).get("files", {})
    if path.name not in files:
        return None
    return files[path.name] == sha256_file(path)


# subcommands ---------------------------------------------------------------

def _config_with_overrides(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
        cfg.raw = {**cfg.raw, "seeds": [args.seed]}
    return cfg


def cmd_run(args) -> int:
    cfg = _config_with_overrides(args)
    out = run_experiment(cfg, Path(args.out) if args.out else None, jobs=args.jobs, resume=args.resume)
    print(out / "results.csv")
    return EXIT_OK


def cmd_simulate(args) -> int:
    data = load_csv(args.input, args.schema)
    masked = inject(data, MissingSpec(args.mechanism, args.rate, args.seed))
    write_csv(masked, args.out, args.schema_out)
    print(json.dumps({"rows": masked.n, "missing_rate": dict(zip(masked.feature_names,
                                                                     masked.missing.mean(axis=0).tolist()))}))
    return EXIT_OK


def cmd_partitions(args) -> int:
    if args.rates:
        rates = json.loads(Path(args.rates).read_text(encoding="utf-8"))
        if not isinstance(rates, list) or len(rates) != args.d:
            raise DataError(f"rates file must hold a list of {args.d} numbers")
    else:
        rates = [0.0] * args.d
    k = default_k(args.d) if args.k is None else args.k
    plan = plan_from_rates(rates, k)
    print(json.dumps(plan.to_dict(), indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_with_overrides(args)
    data = load_csv(cfg.data_path, cfg.schema_path, name=cfg.dataset_name)
    method = cfg.method_objects(data.d)[0]
    seed = cfg.seeds[0]
    est = make_estimator(method, replace(cfg.model_config(), seed=seed), replace(cfg.train_config(), seed=seed))
    est.fit(data)
    Path(args.out).write_bytes(est.to_checkpoint())
    if args.log:
        Path(args.log).write_text(json.dumps([log.to_dict() for log in est.session_logs_], indent=2) + "\n",
                                  encoding="utf-8")
    print(args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    est = FTTClassifierBase.from_checkpoint(Path(args.model).read_bytes())
    data = load_csv(args.input, args.schema)
    if data.feature_names != list(est.feature_names_in_):
        raise DataError("input columns do not match the model's features")
    proba = est.predict_proba(data)
    with Path(args.out).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"p_{c}" for c in est.class_names_])
        for row in proba:
            writer.writerow([repr(float(p)) for p in row])
    if args.report_auc:
        print(json.dumps({"auc": ev.auc_multiclass(proba, data.labels, proba.shape[1])}))
    return EXIT_OK


def cmd_cost(args) -> int:
    cm = ev.CostModel(args.model_dim, args.ffn_dim, args.num_layers, args.num_heads, args.mode)
    rows = ev.cost_curve(args.d, args.kmin, args.kmax, cm)
    handle = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(handle, ["d", "k", "P", "ratio"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "ratio": repr(row["ratio"])})
    finally:
        if args.out:
            handle.close()
    return EXIT_OK


def cmd_report(args) -> int:
    paths = [Path(args.results)] + ([Path(args.reference)] if args.reference else [])
    for path in paths:
        status = verify_manifest(path)
        if status is False:
            raise DataError(f"{path} does not match the content hash recorded in its manifest")
        if status is None:
            logger.warning("%s is not covered by a manifest; contents unverified", path)
    results = read_results_csv(paths[0])
    reference = read_results_csv(paths[1]) if args.reference else []
    out_dir = Path(args.out) if args.out else paths[0].parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in write_reports(results, reference, out_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ifial", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int, help="replace the config's seed list")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="inject MCAR/MNAR missingness into a CSV")
    p.add_argument("--mechanism", required=True, choices=["mcar", "mnar"])
    p.add_argument("--rate", required=True, type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("partitions", help="print the partition plan for d features")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--rates", help="JSON list of per-feature missing rates")
    p.set_defaults(func=cmd_partitions)

    p = sub.add_parser("train", help="train the first configured method on the whole dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="class probabilities from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report-auc", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cost", help="relative operation count of incremental training")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--kmin", type=int, default=2)
    p.add_argument("--kmax", type=int)
    p.add_argument("--mode", choices=ev.COST_MODES, default=ev.SCORE_ONLY)
    p.add_argument("--model-dim", type=int, default=128)
    p.add_argument("--ffn-dim", type=int, default=2048)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--num-heads", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("report", help="rank table, win matrix and robustness curve from results")
    p.add_argument("--results", required=True)
    p.add_argument("--reference")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RunRefused) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
