import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mucs.cli import main, set_dotted
from mucs.harness import write_jsonl
from stubworld import World

BINARY_TASK = {"task_id": "binary", "class_names": ["neg", "pos"], "instruction": "Is this input positive?"}


def read_jsonl(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture
def world150(tmp_path):
    w = World(n=150, n_faults=16, seed=2)
    cfg = w.write(tmp_path, cache="cache.jsonl")
    return w, cfg


# --- predict ---------------------------------------------------------------------------

def test_predict_and_warm_cache(world150, tmp_path, capsys):
    _, cfg = world150
    assert main(["predict", "--config", str(cfg), "--out", str(tmp_path / "p1")]) == 0
    rows = read_jsonl(tmp_path / "p1" / "predictions.jsonl")
    assert len(rows) == 150 and set(rows[0]) == {"id", "probs"}
    capsys.readouterr()
    assert main(["predict", "--config", str(cfg), "--out", str(tmp_path / "p2")]) == 0
    assert "requests=0" in capsys.readouterr().out
    assert (tmp_path / "p1" / "predictions.jsonl").read_bytes() == (tmp_path / "p2" / "predictions.jsonl").read_bytes()
    m = manifest(tmp_path / "p1")
    assert m["command"] == "predict" and m["failures"] == [] and m["seed"] == 0 and "version" in m


def test_predict_partial_failure(world150, tmp_path):
    w, cfg = world150
    stub = read_jsonl(tmp_path / "stub.jsonl")
    stub[5]["reply"] = "I would rather not say."
    write_jsonl(tmp_path / "stub.jsonl", stub)
    assert main(["predict", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 2
    assert len(read_jsonl(tmp_path / "p" / "predictions.jsonl")) == 149
    assert manifest(tmp_path / "p")["failures"] == [w.items[5].id]


def test_predict_transport_exhaustion(world150, tmp_path):
    _, cfg = world150
    stub = read_jsonl(tmp_path / "stub.jsonl")
    write_jsonl(tmp_path / "stub.jsonl", stub[:-1])   # one prompt has no reply at all
    assert main(["predict", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 3
    assert len(manifest(tmp_path / "p")["transport_failures"]) == 1


def test_predict_stub_flag_and_default_line(tmp_path, monkeypatch):
    write_jsonl(tmp_path / "d.jsonl", [{"id": f"a{i}", "prompt": f"text {i}"} for i in range(5)])
    write_jsonl(tmp_path / "s.jsonl", [{"id": "a0", "reply": "0.9"}, {"default": "score: 0.2"}])
    (tmp_path / "c.json").write_text(json.dumps({"dataset": "d.jsonl", "task": BINARY_TASK}))
    monkeypatch.chdir(tmp_path)
    assert main(["predict", "--config", "c.json", "--stub", "s.jsonl", "--out", "out"]) == 0
    rows = read_jsonl(tmp_path / "out" / "predictions.jsonl")
    assert rows[0]["probs"] == pytest.approx([0.1, 0.9]) and rows[1]["probs"] == pytest.approx([0.8, 0.2])


# --- evaluate ----------------------------------------------------------------------------

def test_evaluate_is_byte_identical(tmp_path):
    cfg = World(n=60, n_faults=10, seed=4).write(tmp_path, mucs={"n_mutants": 4, "K": 2})
    outs = []
    for name in ("e1", "e2"):
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "0"]) == 0
        outs.append(tmp_path / name)
    files = sorted(p.name for p in outs[0].iterdir())
    assert {"report.json", "trc_original.csv", "trc_mucs.csv", "improvement.csv", "calibration.csv",
            "histogram.csv", "manifest.json"} <= set(files)
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_evaluate_budgets_flag_and_prerequisite_cells(world150, tmp_path):
    _, cfg = world150
    out = tmp_path / "e"
    code = main(["evaluate", "--config", str(cfg), "--out", str(out), "--budgets", "0.1,0.3,0.5",
                 "--methods", "random,gini,testrank_lite"])
    assert code == 0
    rows = list(csv.reader(open(out / "trc_original.csv")))
    assert [r[0] for r in rows] == ["Budget", "10%", "30%", "50%", "Average"]
    assert rows[0] == ["Budget", "Random", "Gini", "TestRank"]
    assert all(r[3] == "-" for r in rows[1:])


def _binary_world(tmp_path):
    rng = np.random.default_rng(8)
    items = [{"id": f"b{i}", "prompt": f"input number {i}", "label": int(rng.integers(2))} for i in range(40)]
    write_jsonl(tmp_path / "d.jsonl", items)
    write_jsonl(tmp_path / "s.jsonl", [{"id": it["id"], "reply": f"{rng.uniform():.4f}"} for it in items])
    (tmp_path / "c.json").write_text(json.dumps({"dataset": "d.jsonl", "stub": "s.jsonl", "task": BINARY_TASK}))
    return tmp_path / "c.json"


def test_binary_gini_and_maxp_columns_match(tmp_path):
    cfg = _binary_world(tmp_path)
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e"), "--methods", "gini,maxp"]) == 0
    rows = list(csv.reader(open(tmp_path / "e" / "trc_original.csv")))
    assert rows[0] == ["Budget", "Gini", "MaxP"]
    assert all(r[1] == r[2] for r in rows[1:])
    assert main(["rank", "--config", str(cfg), "--out", str(tmp_path / "r"), "--methods", "gini,maxp"]) == 0
    gini, maxp = read_jsonl(tmp_path / "r" / "rankings.jsonl")
    assert gini["ids"] == maxp["ids"]


def test_evaluate_config_errors(tmp_path, capsys):
    assert main(["evaluate", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["evaluate", "--config", str(tmp_path / "bad.json")]) == 1
    (tmp_path / "c.json").write_text(json.dumps({"dataset": "d.jsonl", "stub": "s.jsonl", "budgets": [0.5, 0.1]}))
    assert main(["evaluate", "--config", str(tmp_path / "c.json")]) == 1
    assert "strictly increasing" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["evaluate"])
    assert info.value.code == 2  # argparse usage error


# --- mutate / rank / compare / cache-stats -----------------------------------------------------------

def test_mutate_audit_lines(tmp_path):
    cfg = World(n=200, n_faults=30).write(tmp_path, stub_file=False)
    assert main(["mutate", "--config", str(cfg), "--out", str(tmp_path / "m"), "--set", "mucs.n_mutants=10"]) == 0
    rows = read_jsonl(tmp_path / "m" / "mutants.jsonl")
    assert len(rows) == 2000
    assert set(rows[0]) == {"item_id", "mutant_index", "op_chain", "mutant_prompt"}
    assert len(rows[0]["op_chain"]) == 3
    assert manifest(tmp_path / "m")["config"]["mucs"] == {"n_mutants": 10}


def test_mutate_seed_changes_output(tmp_path):
    cfg = World(n=20, n_faults=3).write(tmp_path, stub_file=False)
    main(["mutate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["mutate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "1"])
    main(["mutate", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "2"])
    a, b, c = ((tmp_path / d / "mutants.jsonl").read_bytes() for d in "abc")
    assert a == b and a != c
    assert manifest(tmp_path / "c")["seed"] == 2


def test_rank_full_permutations(tmp_path):
    cfg = World(n=50, n_faults=8).write(tmp_path, mucs={"n_mutants": 3, "K": 1})
    assert main(["rank", "--config", str(cfg), "--out", str(tmp_path / "r"), "--mucs",
                 "--methods", "random,gini,mcp,ats,nns,bald,testrank_lite"]) == 0
    rows = {r["method"]: r for r in read_jsonl(tmp_path / "r" / "rankings.jsonl")}
    ids = sorted(f"it{i:03d}" for i in range(50))
    for m in ("random", "gini", "mcp", "ats", "nns", "bald"):
        assert sorted(rows[m]["ids"]) == ids
    assert "unavailable" in rows["testrank_lite"]


def test_compare_same_report_is_flat(world150, tmp_path):
    _, cfg = world150
    main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e"), "--methods", "gini,maxp,margin"])
    assert main(["compare", str(tmp_path / "e"), str(tmp_path / "e" / "report.json"), "--out", str(tmp_path / "c")]) == 0
    table = json.loads((tmp_path / "c" / "comparison.json").read_text())
    dirs = {c["direction"] for row in table["cells"].values() for c in row.values()}
    assert dirs <= {"flat", "skipped"}
    rows = list(csv.reader(open(tmp_path / "c" / "improvement.csv")))
    assert rows[0] == ["Budget", "Gini-M", "MaxP-M", "Margin-M"]


def test_cache_stats(world150, tmp_path, capsys):
    _, cfg = world150
    main(["predict", "--config", str(cfg), "--out", str(tmp_path / "p")])
    capsys.readouterr()
    prices = tmp_path / "prices.json"
    prices.write_text(json.dumps({"stub": {"input_per_1k": 0.03, "output_per_1k": 0.0}}))
    assert main(["cache-stats", "--config", str(cfg), "--set", f"prices={json.dumps(str(prices))}"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["entries"] == 150 and stats["estimated_cost"] > 0


def test_set_dotted():
    d = {"mucs": {"K": 3}}
    set_dotted(d, "mucs.n_mutants", 5)
    set_dotted(d, "endpoint.top_p", 0.9)
    assert d == {"mucs": {"K": 3, "n_mutants": 5}, "endpoint": {"top_p": 0.9}}


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mucs.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("mucs ")

