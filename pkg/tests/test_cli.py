import json
import subprocess
import sys

import pytest

from pnag.artifacts import read_csv, read_manifest
from pnag.cli import main, parse_budgets
from pnag.evaluator import EvaluatorModel


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end run on the reduced space shared by the CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    data, ev, gen = d / "data.jsonl", d / "ev.json", d / "gen.json"
    assert main(["dataset", "--space", "reduced", "--count", "300", "--devices", "mobile,cpu",
                 "--out", str(data)]) == 0
    assert main(["train-evaluator", "--data", str(data), "--space", "reduced", "--anchors", "36:52:3",
                 "--epochs", "3", "--hidden", "16", "--out", str(ev)]) == 0
    assert main(["train-generator", "--evaluator", str(ev), "--iters", "20", "--log-every", "10",
                 "--out", str(gen)]) == 0
    return d


def test_dataset_outputs_and_manifest(workdir):
    lines = (workdir / "data.jsonl").read_text().splitlines()
    assert len(lines) == 300
    assert set(json.loads(lines[0])["latency"]) == {"mobile", "cpu"}
    doc = read_manifest(workdir / "data.jsonl.manifest.json")
    assert doc["command"] == "dataset" and "dataset" in doc["seeds"]


def test_models_and_logs_written(workdir):
    ev = EvaluatorModel.load(workdir / "ev.json")
    assert ev.anchors.tolist() == [36.0, 44.0, 52.0]
    assert len(read_csv(workdir / "ev.json.log.csv", "evaluator_log")) == 3
    rows = read_csv(workdir / "gen.json.log.csv", "generator_log")
    assert len(rows) == 2 * 3
    assert (workdir / "gen.json.manifest.json").exists()


def test_default_anchors_from_data(tmp_path, workdir):
    out = tmp_path / "ev.json"
    assert main(["train-evaluator", "--data", str(workdir / "data.jsonl"), "--space", "reduced", "--epochs", "1",
                 "--hidden", "8", "--k", "4", "--out", str(out)]) == 0
    b = EvaluatorModel.load(out).budget
    assert b.k == 4 and 34 <= b.b_min < b.b_max <= 54


def test_generate_outputs(workdir, capsys):
    out = workdir / "gen.csv"
    code = main(["generate", "--generator", str(workdir / "gen.json"), "--evaluator", str(workdir / "ev.json"),
                 "--budget", "40", "--budget", "44:52:3", "--out", str(out), "--json"])
    assert code == 0
    rows = read_csv(out, "generate")
    assert [float(r["budget_ms"]) for r in rows] == [40.0, 44.0, 48.0, 52.0]
    printed = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(printed) == 4 and {"budget_ms", "latency_ms", "accuracy", "feasible", "arch"} <= set(printed[0])


def test_generate_predictor_filter_and_greedy(workdir):
    assert main(["generate", "--generator", str(workdir / "gen.json"), "--budget", "46", "--filter",
                 "predictor", "--data", str(workdir / "data.jsonl")]) == 0
    assert main(["generate", "--generator", str(workdir / "gen.json"), "--budget", "46", "--mode", "greedy"]) == 0
    assert main(["generate", "--generator", str(workdir / "gen.json"), "--budget", "46",
                 "--filter", "predictor"]) == 2


def test_frontier_and_histogram(workdir):
    front, hist = workdir / "front.csv", workdir / "hist.csv"
    assert main(["frontier", "--generator", str(workdir / "gen.json"), "--budget", "36:52:5",
                 "--samples", "8", "--out", str(front)]) == 0
    assert len(read_csv(front, "frontier")) == 5
    assert main(["histogram", "--generator", str(workdir / "gen.json"), "--budget", "44", "--samples", "50",
                 "--out", str(hist)]) == 0
    assert len(read_csv(hist, "histogram")) == 50


def test_oracle_front_and_init_config(tmp_path):
    out = tmp_path / "front.csv"
    assert main(["oracle-front", "--space", "reduced", "--out", str(out)]) == 0
    assert len(read_csv(out, "frontier")) >= 5
    assert main(["init-config", "--space", "reduced", "--out-dir", str(tmp_path / "cfg")]) == 0
    names = sorted(p.name for p in (tmp_path / "cfg").iterdir())
    assert names == ["oracle.json", "pipeline.json", "space.json"]
    data = tmp_path / "d.jsonl"
    assert main(["dataset", "--space", str(tmp_path / "cfg" / "space.json"), "--oracle-config",
                 str(tmp_path / "cfg" / "oracle.json"), "--count", "5", "--out", str(data)]) == 0


@pytest.mark.parametrize("argv, code", [
    (["dataset", "--count", "0", "--out", "x.jsonl"], 2),
    (["dataset", "--bogus"], 2),
    (["frobnicate"], 2),
    (["train-evaluator", "--data", "missing.jsonl", "--out", "e.json"], 3),
    (["dataset", "--space", "reduced", "--count", "3", "--devices", "phone", "--out", "{tmp}/x.jsonl"], 3),
    (["train-evaluator", "--data", "{data}", "--space", "reduced", "--anchors", "52:36:3", "--out", "{tmp}/e.json"], 3),
    (["generate", "--generator", "{gen}", "--budget", "500"], 3),
    (["generate", "--generator", "{gen}", "--budget", "abc"], 3),
])
def test_exit_codes(argv, code, workdir, tmp_path):
    subs = {"tmp": str(tmp_path), "data": str(workdir / "data.jsonl"), "gen": str(workdir / "gen.json")}
    assert main([a.format(**subs) for a in argv]) == code


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(workdir, tmp_path):
    assert main(["train-evaluator", "--data", str(workdir / "data.jsonl"), "--space", "reduced", "--anchors",
                 "36:52:3", "--epochs", "3", "--lr-max", "1e30", "--lr-min", "1e30", "--hidden", "16",
                 "--out", str(tmp_path / "e.json")]) == 4


def test_replay_reproduces_and_detects_changes(workdir, tmp_path, capsys):
    out = tmp_path / "hist.csv"
    assert main(["histogram", "--generator", str(workdir / "gen.json"), "--budget", "40", "--samples", "20",
                 "--out", str(out)]) == 0
    manifest = str(out) + ".manifest.json"
    assert main(["replay", manifest]) == 0
    assert "byte-identically" in capsys.readouterr().out
    doc = json.loads(open(manifest).read())
    doc["outputs"][str(out)]["sha256"] = "0" * 64
    open(manifest, "w").write(json.dumps(doc))
    assert main(["replay", manifest]) == 3


def test_parse_budgets():
    assert parse_budgets(["80", "100:120:3"]) == [80.0, 100.0, 110.0, 120.0]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pnag", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout
    res = subprocess.run([sys.executable, "-m", "pnag", "dataset", "--count", "0", "--out", str(tmp_path / "x")],
                         capture_output=True, text=True)
    assert res.returncode == 2 and "usage error" in res.stderr
