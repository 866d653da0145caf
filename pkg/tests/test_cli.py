import hashlib
import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from trajdp import histogram as hist
from trajdp.cli import EXIT_CODES, main

DATA = Path(__file__).parent / "data"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture
def pipeline(tmp_path, capsys):
    p = tmp_path
    assert run(capsys, "gen-data", "--model", "skewed", "--n", 300, "--len", 8, "--seed", 1,
               "--resolution", 4, "--out", p / "d.csv")[0] == 0
    assert run(capsys, "ingest", "--input", p / "d.csv", "--bbox", "0,0,1,1", "--resolution", 4,
               "--out", p / "h.json")[0] == 0
    assert run(capsys, "gen-queries", "--hist", p / "h.json", "--count", 500, "--seed", 2,
               "--out", p / "q.json")[0] == 0
    return p


def test_ingest_golden(tmp_path, capsys):
    code, out, _ = run(capsys, "ingest", "--input", DATA / "two_traj.csv", "--bbox", "0,0,1,1",
                       "--resolution", 2, "--out", tmp_path / "h.json")
    assert code == 0
    assert json.loads(out.splitlines()[-1]) == {"n": 2, "rejected": 0, "k_max": 7}
    assert hist.load(tmp_path / "h.json").equals(hist.load(DATA / "two_traj.hist.json"))


def test_ingest_empty_csv(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("")
    code, out, _ = run(capsys, "ingest", "--input", tmp_path / "e.csv", "--bbox", "0,0,1,1",
                       "--resolution", 2, "--out", tmp_path / "h.json")
    assert code == 0 and hist.load(tmp_path / "h.json").n == 0


def test_every_command_echoes_config(pipeline, capsys):
    code, out, _ = run(capsys, "synthesize", "--hist", pipeline / "h.json", "--queries", pipeline / "q.json",
                       "--epsilon", 0.5, "--seed", 9, "--out", pipeline / "pub.json")
    assert code == 0
    cfg = json.loads(out.splitlines()[0].removeprefix("config: "))
    assert cfg["seed"] == 9 and cfg["epsilon"] == 0.5 and cfg["iterations"] == 10


def test_synthesize_deterministic(pipeline, capsys):
    outs = []
    for k in range(2):
        out = pipeline / f"pub{k}.json"
        trace = pipeline / f"trace{k}.jsonl"
        assert run(capsys, "synthesize", "--hist", pipeline / "h.json", "--queries", pipeline / "q.json",
                   "--epsilon", 0.1, "--iterations", 10, "--seed", 4, "--trace", trace,
                   "--partition-out", pipeline / "p.json", "--out", out)[0] == 0
        outs.append((digest(out), digest(trace)))
    assert outs[0] == outs[1]
    assert len((pipeline / "trace0.jsonl").read_text().splitlines()) == 10
    assert "regions" in json.loads((pipeline / "p.json").read_text())


def test_inputs_not_mutated(pipeline, capsys):
    before = {f: digest(pipeline / f) for f in ("d.csv", "h.json", "q.json")}
    run(capsys, "synthesize", "--hist", pipeline / "h.json", "--queries", pipeline / "q.json",
        "--epsilon", 1, "--out", pipeline / "pub.json")
    run(capsys, "evaluate", "--true", pipeline / "h.json", "--published", pipeline / "pub.json",
        "--queries", pipeline / "q.json", "--out", pipeline / "e.csv")
    assert before == {f: digest(pipeline / f) for f in before}


def test_evaluate_self_is_zero(pipeline, capsys):
    code, out, _ = run(capsys, "evaluate", "--true", pipeline / "h.json", "--published", pipeline / "h.json",
                       "--queries", pipeline / "q.json", "--out", pipeline / "e.csv")
    assert code == 0
    row = json.loads(out.splitlines()[-1])
    assert row["avg_l1"] == 0 and row["kld"] == 0
    header, values = (pipeline / "e.csv").read_text().splitlines()
    assert header.startswith("avg_l1,kld")


def test_experiment_command(tmp_path, capsys):
    cfg = {"mechanisms": ["dqam", "lm"], "epsilons": [1.0], "datasets": [{"name": "s", "n": 100, "resolution": 3}],
           "seeds": [0, 1], "T": 5, "query_count": 100}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "experiment", "--config", tmp_path / "c.json", "--out", tmp_path / "r.csv",
                       "--summary", tmp_path / "s.csv")
    assert code == 0
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0].startswith("mechanism,epsilon,dataset,seed,avg_l1,kld,runtime_s,violations")
    assert len(rows) == 5
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 3


@pytest.mark.parametrize("argv,category", [
    (["ingest", "--input", "{tmp}/missing.csv", "--bbox", "0,0,1,1", "--resolution", "2", "--out", "{tmp}/h.json"], "io"),
    (["ingest", "--input", "{tmp}/bad.csv", "--bbox", "0,0,1,1", "--resolution", "2", "--out", "{tmp}/h.json"], "parse"),
    (["ingest", "--input", "{tmp}/bad.csv", "--bbox", "1,0,0,1", "--resolution", "2", "--out", "{tmp}/h.json"], "validation"),
    (["synthesize", "--hist", "{tmp}/bad.json", "--queries", "{tmp}/bad.json", "--epsilon", "1", "--out", "{tmp}/o.json"], "parse"),
    (["experiment", "--config", "{tmp}/bad.json"], "validation"),
])
def test_error_categories(tmp_path, capsys, argv, category):
    (tmp_path / "bad.csv").write_text("traj_id,seq,lat\n1,0,0.5\n")
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run(capsys, *[a.format(tmp=tmp_path) for a in argv])
    assert code == EXIT_CODES[category] != 0
    assert json.loads(err.strip().splitlines()[-1])["error"] == category


def test_non_positive_epsilon(pipeline, capsys):
    code, _, err = run(capsys, "synthesize", "--hist", pipeline / "h.json", "--queries", pipeline / "q.json",
                       "--epsilon", 0, "--out", pipeline / "o.json")
    assert code == EXIT_CODES["validation"]
    assert "epsilon" in json.loads(err)["message"]


def test_mismatched_query_grid(pipeline, capsys):
    run(capsys, "gen-queries", "--resolution", 3, "--count", 10, "--out", pipeline / "q8.json")
    code, _, _ = run(capsys, "synthesize", "--hist", pipeline / "h.json", "--queries", pipeline / "q8.json",
                     "--epsilon", 1, "--out", pipeline / "o.json")
    assert code == EXIT_CODES["validation"]


def test_full_pipeline_subprocess(tmp_path):
    t0 = time.perf_counter()
    steps = [
        ["gen-data", "--model", "uniform", "--n", "1000", "--len", "10", "--seed", "0", "--out", "d.csv"],
        ["ingest", "--input", "d.csv", "--bbox", "0,0,1,1", "--resolution", "4", "--out", "h.json"],
        ["gen-queries", "--hist", "h.json", "--count", "16000", "--seed", "0", "--out", "q.json"],
        ["synthesize", "--hist", "h.json", "--queries", "q.json", "--epsilon", "0.1", "--iterations", "10",
         "--seed", "0", "--out", "pub.json"],
        ["evaluate", "--true", "h.json", "--published", "pub.json", "--queries", "q.json", "--out", "e.csv"],
    ]
    for argv in steps:
        proc = subprocess.run([sys.executable, "-m", "trajdp.cli", *argv], cwd=tmp_path, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.startswith("config: ")
    assert time.perf_counter() - t0 < 60
