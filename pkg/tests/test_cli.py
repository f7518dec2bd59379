import csv
import json

import pytest

from ctxfuse.cli import main


def run(argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert run(["run", "--generate", "city:45,fog:45", "--gate", "oracle", "--lambda-e", "0", "--tc", "30", "--out", out]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_steps"] == 90 and summary["n_context_id_steps"] == 3
    assert summary["switch_count"] <= 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["args"]["generate"] == "city:45,fog:45"
    assert len(manifest["profile_hash"]) == 64 and len(manifest["trace_hash"]) == 64
    rows = read_csv(out / "steps.csv")
    assert len(rows) == 90 and list(rows[0]) == ["t", "mode", "context", "config_id", "sensor_j", "algo_j", "switch_j", "energy_j", "loss", "latency_s"]


def test_run_json_format(tmp_path):
    out = tmp_path / "o"
    assert run(["run", "--generate", "snow:5", "--format", "json", "--out", out]) == 0
    assert len(json.loads((out / "steps.json").read_text())) == 5


def test_run_from_trace_file(tmp_path):
    t = tmp_path / "t.jsonl"
    assert run(["trace", "--generate", "rain:12", "--seed", "2", "-o", t]) == 0
    assert run(["run", "--trace", t, "--gate", "knowledge", "--out", tmp_path / "o"]) == 0
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    import hashlib

    assert m["trace_hash"] == hashlib.sha256(t.read_bytes()).hexdigest()


def test_run_is_byte_identical(tmp_path):
    args = ["run", "--generate", "night:40,rain:30", "--gate", "estimator", "--lambda-e", "0.01", "--seed", "3"]
    assert run(args + ["--out", tmp_path / "a"]) == 0
    assert run(args + ["--out", tmp_path / "b"]) == 0
    for f in ("steps.csv", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_out_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("CTXFUSE_OUT", str(tmp_path / "env"))
    assert run(["run", "--generate", "fog:3"]) == 0
    assert (tmp_path / "env" / "summary.json").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--profile", "/nonexistent.json"],
        ["run", "--generate", "fog:0"],
        ["run", "--lambda-e", "2"],
        ["run", "--tc", "0"],
        ["run", "--gate", "deep"],
        ["run", "--trace", "/nonexistent.jsonl"],
        ["sweep", "--lambdas", ""],
        ["sweep", "--lambdas", "0,x"],
        ["sweep", "--gates", "oracle,deep"],
    ],
)
def test_validation_failures_exit_1(tmp_path, argv):
    assert run(argv + ["--out", tmp_path]) == 1


def test_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["run", "--generate", "fog:3", "--out", blocker / "sub"]) == 2


def test_sweep_oracle_energy_non_increasing(tmp_path):
    out = tmp_path / "s"
    assert run(["sweep", "--generate", "city:60,fog:60,snow:60", "--gates", "oracle", "--lambdas", "0,0.001,0.01,0.1,1", "--out", out, "--format", "json"]) == 0
    rows = read_csv(out / "pareto.csv")
    assert len(rows) == 5
    e = [float(r["avg_energy_j"]) for r in rows]
    assert all(a >= b for a, b in zip(e, e[1:]))
    assert json.loads((out / "pareto.json").read_text())[0]["gate"] == "oracle"


def test_sweep_cross_product(tmp_path):
    out = tmp_path / "s"
    assert run(["sweep", "--generate", "rain:20", "--gates", "knowledge,estimator,oracle", "--lambdas", "0,0.01,1", "--out", out]) == 0
    rows = read_csv(out / "pareto.csv")
    assert [(r["gate"], r["lambda_e"]) for r in rows] == [(g, l) for g in ("knowledge", "estimator", "oracle") for l in ("0.0", "0.01", "1.0")]


def test_sweep_is_order_stable(tmp_path):
    base = ["sweep", "--generate", "fog:20", "--gates", "oracle,estimator", "--lambdas", "0,1"]
    run(base + ["--workers", "1", "--out", tmp_path / "a"])
    run(base + ["--workers", "4", "--out", tmp_path / "b"])
    assert (tmp_path / "a" / "pareto.csv").read_bytes() == (tmp_path / "b" / "pareto.csv").read_bytes()


def test_report_groups_contexts(tmp_path):
    out = tmp_path / "o"
    run(["run", "--generate", "fog:20,snow:15", "--out", out])
    assert run(["report", out]) == 0
    rows = read_csv(out / "scenario.csv")
    assert [(r["context"], r["n_steps"]) for r in rows] == [("fog", "20"), ("snow", "15")]


def test_report_single_context_matches_summary(tmp_path):
    out = tmp_path / "o"
    run(["run", "--generate", "night:37", "--gate", "estimator", "--lambda-e", "0.001", "--out", out])
    run(["report", out / "steps.csv"])
    (row,) = read_csv(out / "scenario.csv")
    summary = json.loads((out / "summary.json").read_text())
    assert float(row["avg_loss"]) == summary["avg_loss"]
    assert float(row["avg_energy_j"]) == summary["avg_energy_j"]


def test_report_rejects_bad_input(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run(["report", empty]) == 1
    header_only = tmp_path / "h.csv"
    header_only.write_text("t,mode,context,config_id,sensor_j,algo_j,switch_j,energy_j,loss,latency_s\n")
    assert run(["report", header_only]) == 1
    bad = tmp_path / "b.csv"
    bad.write_text("context,loss,energy_j,latency_s\nfog,abc,1,2\n")
    assert run(["report", bad]) == 1
    wrong = tmp_path / "w.csv"
    wrong.write_text("a,b\n1,2\n")
    assert run(["report", wrong]) == 1
    assert run(["report", tmp_path / "missing.csv"]) == 1
