import csv
import json

import numpy as np
import pytest

from ifial.cli import main
from ifial.config import ConfigError, parse_config
from ifial.data import write_csv
from ifial.synthetic import gaussian_classes

SMALL_MODEL = {"model_dim": 8, "num_heads": 2, "num_layers": 1, "ffn_dim": 16}
SMALL_TRAIN = {"max_epochs": 3, "patience": 1, "batch_size": 16}


@pytest.fixture
def workspace(tmp_path):
    data = gaussian_classes(n=60, d=4, informative=2, seed=1)
    write_csv(data, tmp_path / "data.csv", tmp_path / "schema.json")

    def config(**overrides):
        obj = {
            "version": 1,
            "dataset": {"path": "data.csv", "schema": "schema.json", "name": "g"},
            "methods": ["ifial"],
            "mechanisms": ["mcar"],
            "rates": [0.2],
            "seeds": [0, 1],
            "folds": 5,
            "model": SMALL_MODEL,
            "train": SMALL_TRAIN,
            "output_dir": "out",
            "reference": False,
        }
        obj.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(obj), encoding="utf-8")
        return path

    return tmp_path, config


def _rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def test_parse_defaults(tmp_path):
    cfg = parse_config({"version": 1, "dataset": {"path": "a.csv", "schema": "s.json"},
                        "methods": ["ifial", "am_ftt"], "rates": [0.1], "seeds": [0]}, tmp_path)
    assert cfg.k == "half_d" and cfg.folds == 5 and cfg.mechanisms == ["mcar"]
    assert cfg.dataset_name == "a"
    assert cfg.model_config().model_dim == 64
    assert [m.k for m in cfg.method_objects(9)] == [None, None]


@pytest.mark.parametrize("patch,path", [
    ({"rates": [1.5]}, "rates[0]"),
    ({"rates": [0.1, "x"]}, "rates[1]"),
    ({"methods": ["ifial", "svm"]}, "methods[1]"),
    ({"mechanisms": ["mar"]}, "mechanisms[0]"),
    ({"extra": 1}, "extra"),
    ({"version": 2}, "version"),
    ({"k": 1}, "k"),
    ({"model": {"model_dim": 10, "num_heads": 4}}, "model"),
    ({"model": {"depth": 3}}, "model.depth"),
    ({"folds": 1}, "folds"),
])
def test_config_errors_name_the_field(tmp_path, patch, path):
    obj = {"version": 1, "dataset": {"path": "a.csv", "schema": "s.json"},
           "methods": ["ifial"], "rates": [0.1], "seeds": [0]}
    obj.update(patch)
    with pytest.raises(ConfigError) as err:
        parse_config(obj, tmp_path)
    assert err.value.path == path


def test_run_writes_grid(workspace, capsys):
    root, config = workspace
    assert main(["run", "--config", str(config())]) == 0
    out = root / "out"
    rows = _rows(out / "results.csv")
    assert len(rows) == 10
    assert list(rows[0]) == ["dataset", "method", "mechanism", "rate", "fold", "seed", "auc"]
    assert {(r["seed"], r["fold"]) for r in rows} == {(str(s), str(f)) for s in (0, 1) for f in range(5)}
    for name in ("rank_table.json", "win_matrix.json", "session_logs.jsonl", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1] and "results.csv" in manifest["files"]


def test_bad_rate_exits_2(workspace, capsys):
    _, config = workspace
    assert main(["run", "--config", str(config(rates=[1.5]))]) == 2
    assert "rates[0]" in capsys.readouterr().err


def test_missing_data_file_exits_3(workspace, capsys):
    _, config = workspace
    path = config(dataset={"path": "nope.csv", "schema": "schema.json"})
    assert main(["run", "--config", str(path)]) == 3


def test_rerun_is_byte_identical_and_resume_guard(workspace, monkeypatch):
    root, config = workspace
    monkeypatch.setenv("IFIAL_DETERMINISTIC", "1")
    path = config(seeds=[0])
    assert main(["run", "--config", str(path), "--out", str(root / "a")]) == 0
    assert main(["run", "--config", str(path), "--out", str(root / "b"), "--jobs", "2"]) == 0
    assert (root / "a" / "results.csv").read_bytes() == (root / "b" / "results.csv").read_bytes()
    # existing run needs --resume
    assert main(["run", "--config", str(path), "--out", str(root / "a")]) == 2
    before = (root / "a" / "results.csv").read_bytes()
    assert main(["run", "--config", str(path), "--out", str(root / "a"), "--resume"]) == 0
    assert (root / "a" / "results.csv").read_bytes() == before
    # a different config may not resume
    other = config(seeds=[0], rates=[0.3])
    assert main(["run", "--config", str(other), "--out", str(root / "a"), "--resume"]) == 2


def test_resume_completes_partial_run(workspace):
    root, config = workspace
    path = config(seeds=[0])
    assert main(["run", "--config", str(path), "--out", str(root / "full")]) == 0
    cells = (root / "full" / "cells.jsonl").read_text().splitlines()
    partial = root / "partial"
    partial.mkdir()
    (partial / "cells.jsonl").write_text("\n".join(cells[:2]) + "\n")
    assert main(["run", "--config", str(path), "--out", str(partial), "--resume"]) == 0
    assert (partial / "results.csv").read_bytes() == (root / "full" / "results.csv").read_bytes()


def test_reference_and_report(workspace, capsys):
    root, config = workspace
    path = config(seeds=[0], methods=["ifial", "median_ftt"], reference=True)
    assert main(["run", "--config", str(path)]) == 0
    out = root / "out"
    assert len(_rows(out / "reference.csv")) == 10
    assert all(r["mechanism"] == "none" for r in _rows(out / "reference.csv"))
    curve = _rows(out / "robustness.csv")
    assert {r["rate"] for r in curve} == {"0.0", "0.2"}
    report = root / "report"
    assert main(["report", "--results", str(out / "results.csv"),
                 "--reference", str(out / "reference.csv"), "--out", str(report)]) == 0
    assert (report / "rank_table.json").read_bytes() == (out / "rank_table.json").read_bytes()
    # tampering is refused
    text = (out / "results.csv").read_text()
    (out / "results.csv").write_text(text.replace("ifial", "ifial", 1) + "g,ifial,mcar,0.2,9,0,0.5\n")
    assert main(["report", "--results", str(out / "results.csv"), "--out", str(report)]) == 3


def test_simulate_partitions_cost(workspace, capsys, tmp_path):
    root, _ = workspace
    assert main(["simulate", "--mechanism", "mcar", "--rate", "0.25", "--in", str(root / "data.csv"),
                 "--schema", str(root / "schema.json"), "--out", str(root / "masked.csv")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 60 and all(v == 0.25 for v in summary["missing_rate"].values())

    rates = tmp_path / "rates.json"
    rates.write_text(json.dumps([0.5, 0.1, 0.3, 0.0, 0.2, 0.4, 0.6, 0.7]))
    assert main(["partitions", "--d", "8", "--k", "4", "--rates", str(rates)]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["windows"] == [[3, 1, 4, 2], [4, 2, 5, 0], [5, 0, 6, 7]]

    assert main(["cost", "--d", "8", "--kmin", "4", "--kmax", "5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "d,k,P,ratio"
    assert lines[1] == "8,4,3,0.75" and float(lines[2].split(",")[3]) == pytest.approx(75 / 64)


def test_train_then_predict(workspace, capsys):
    root, config = workspace
    path = config(seeds=[3])
    ckpt = root / "model.ckpt"
    assert main(["train", "--config", str(path), "--out", str(ckpt), "--log", str(root / "log.json")]) == 0
    assert len(json.loads((root / "log.json").read_text())) == 3  # d=4, k=2
    capsys.readouterr()
    assert main(["predict", "--model", str(ckpt), "--in", str(root / "data.csv"),
                 "--schema", str(root / "schema.json"), "--out", str(root / "pred.csv"), "--report-auc"]) == 0
    assert 0.0 <= json.loads(capsys.readouterr().out)["auc"] <= 1.0
    proba = np.array([[float(v) for v in r.values()] for r in _rows(root / "pred.csv")])
    assert proba.shape == (60, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    # same config and seed reproduce the checkpoint bytes
    again = root / "again.ckpt"
    assert main(["train", "--config", str(path), "--out", str(again)]) == 0
    assert again.read_bytes() == ckpt.read_bytes()
