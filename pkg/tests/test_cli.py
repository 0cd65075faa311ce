import csv
import json
from pathlib import Path

import pytest

from fedbotnet import cli
from fedbotnet.cli import atomic_write, main

SMALL = {"data": {"synthetic": {"n_nodes": 3, "rows_per_node": 330, "n_features": 10}}, "timing": "work"}


def write_config(tmp_path, doc=SMALL, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def tree_snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    out = tmp / "out"
    assert main(["run", "--config", write_config(tmp), "--out", str(out), "--seed", "5"]) == 0
    return tmp, out


def test_run_writes_every_artifact(small_run):
    _, out = small_run
    for rel in ["config.json", "data/device_1/benign.csv", "models/tree/node_3.fbm", "metrics/knn.csv",
                "cross_eval/tree_matrix.csv", "cross_eval/logistic_matrix.json", "score/scorecard.csv",
                "federation/report.csv", "report/long.csv"]:
        assert (out / rel).is_file(), rel
    rows = list(csv.DictReader((out / "federation/report.csv").open()))
    assert [r["node"] for r in rows] == ["1", "2", "3"]
    assert all(r["ensemble_accuracy"] for r in rows)


def test_run_is_byte_identical(small_run, tmp_path):
    tmp, out = small_run
    again = tmp_path / "again"
    assert main(["run", "--config", write_config(tmp_path), "--out", str(again), "--seed", "5", "--jobs", "3"]) == 0
    assert tree_snapshot(out) == tree_snapshot(again)


def test_steps_rerun_individually(small_run):
    tmp, out = small_run
    cfg = write_config(tmp)
    before = tree_snapshot(out)
    for step in ["cross-eval", "score", "federate", "report"]:
        assert main([step, "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
    assert tree_snapshot(out) == before


def test_score_with_identical_metrics(tmp_path):
    (tmp_path / "metrics").mkdir()
    body = "node,accuracy,training_time,train_rows\n1,0.9,2.0,100\n2,0.8,1.0,100\n"
    for kind in ("tree", "knn"):
        (tmp_path / "metrics" / f"{kind}.csv").write_text(body)
    assert main(["score", "--out", str(tmp_path), "--model", "tree", "--model", "knn"]) == 0
    rows = list(csv.DictReader((tmp_path / "score/scorecard.csv").open()))
    assert rows[0]["score"] == rows[1]["score"]


def test_federate_published_matrix(tmp_path):
    assert main(["federate", "--matrix", "tree", "--out", str(tmp_path)]) == 0
    got = list(csv.DictReader((tmp_path / "federation/report.csv").open()))
    fixture = Path(cli.__file__).parent / "fixtures" / "published_tree_ensemble.csv"
    want = list(csv.DictReader(fixture.open()))
    for g, w in zip(got, want, strict=True):
        assert g["node"] == w["node"]
        assert abs(float(g["avg_accuracy_per_node"]) - float(w["avg_accuracy_per_node"])) <= 0.005
        assert g["ensemble_accuracy"] == ""


def test_federate_matrix_from_file(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("train_node,node_1,node_2\nnode_1,1.0,0.5\nnode_2,0.25,0.75\n")
    assert main(["federate", "--matrix", str(path), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o/federation/report.csv").read_text().splitlines()[1:] == ["1,0.75,", "2,0.5,"]


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["train", "--model", "svm"],
    ["score", "--weights", "0.7:0.7"],
    ["federate", "--matrix", "nope"],
    ["train", "--jobs", "0"],
])
def test_usage_and_config_errors_exit_1(argv, tmp_path, capsys):
    with_out = argv + ["--out", str(tmp_path)] if argv and argv[0] != "bogus" else argv
    try:
        code = main(with_out)
    except SystemExit as exc:
        code = exc.code
    assert code == 1
    assert capsys.readouterr().err


@pytest.mark.parametrize("doc, message", [
    ({"nonsense": 1}, "unknown config keys"),
    ({"models": {"knn": {"standardize": False}}}, "standardized"),
    ({"data": {"synthetic": {"n_nodes": 2}, "nbaiot_root": "x"}}, "exactly one source"),
    ({"ensemble_weights": "loud"}, "ensemble_weights"),
])
def test_bad_config_files(tmp_path, capsys, doc, message):
    assert main(["train", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == 1
    assert message in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "seed": ,\n}')
    assert main(["train", "--config", str(path)]) == 1
    assert "bad.json:2" in capsys.readouterr().err


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 2
    assert "missing synthetic data" in capsys.readouterr().err
    assert main(["cross-eval", "--config", write_config(tmp_path, {"data": {"nbaiot_root": str(tmp_path / "x")}}),
                 "--out", str(tmp_path)]) == 2


def test_corrupt_model_exit_2(small_run, tmp_path, capsys):
    tmp, out = small_run
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    model = copy / "models/tree/node_2.fbm"
    model.write_bytes(model.read_bytes()[:-3])
    assert main(["cross-eval", "--config", write_config(tmp), "--out", str(copy), "--model", "tree"]) == 2
    assert "node_2" not in capsys.readouterr().out


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "x.csv"
    atomic_write(target, "old\n")

    def boom(*_):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write(target, "new\n")
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


def test_provenance_omits_output_location(small_run):
    _, out = small_run
    doc = json.loads((out / "config.json").read_text())
    assert "out" not in doc and "jobs" not in doc
    assert doc["standardized"] == {"tree": False, "knn": True, "logistic": True}
    assert doc["seed"] == 5
