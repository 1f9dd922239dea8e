"""Command-line behaviour: outputs, exit codes, determinism and figure files."""
import csv
import io
import json
import os
import subprocess
import sys

import pytest

from countable_mdp.cli import run_command
from countable_mdp.report import OUTPUT_ENV


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run_command(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(autouse=True)
def _no_output_dir(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def test_recursion_example():
    code, out, _ = run("recursion", "--n", "1", "--k", "1", "--grid", "uniform:7/10")
    assert code == 0
    (row,) = rows(out)
    assert (row["s"], row["t"], row["d"]) == ("169/400", "133/400", "231/400")
    assert row["s_dec"] == "0.4225"


def test_greedy_seq_example(tmp_path):
    plot = tmp_path / "seq.png"
    code, out, _ = run("greedy-seq", "--N", "50", "--plot", str(plot))
    assert code == 0
    table = rows(out)
    assert table[1]["u"] == "9/100" and table[1]["v"] == "91/100"
    assert all(r["u_nondecreasing"] == "true" and r["v_below_n"] == "true" for r in table)
    assert plot.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_estimate_is_byte_identical():
    argv = ("estimate", "--family", "fig1b", "--strategy", "fig1-markov:k=3", "--monitor", "no-sink:h=40",
            "--samples", "3000", "--seed", "7")
    first = run(*argv)
    assert first[0] == 0
    assert first == run(*argv)
    (row,) = rows(first[1])
    assert float(row["lo"]) <= float(row["point"]) <= float(row["hi"])
    assert row["seed"] == "7" and row["samples"] == "3000"


def test_usage_errors_exit_two():
    code, out, err = run("estimate", "--family", "fig1b")
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "usage"
    assert run("no-such-command")[0] == 2
    assert run("recursion", "--n", "x", "--k", "1", "--grid", "down:1")[0] == 2


def test_validation_errors_exit_one(tmp_path):
    code, _, err = run("family", "build", "--model", str(tmp_path / "missing.json"))
    assert code == 1 and json.loads(err)["error"] == "validation-error"
    code, _, err = run("recursion", "--n", "2", "--k", "3", "--grid", "down:1")
    assert code == 1
    code, _, err = run("estimate", "--family", "fig1a", "--strategy", "greedy-mr", "--monitor", "no-sink:h=5",
                       "--seed", "1", "--samples", "10")
    assert code == 1 and "tree-chain" in json.loads(err)["message"]
    code, _, err = run("exact", "--family", "fig1a", "--strategy", "fig1-markov:k=2")
    assert code == 1


def test_bad_model_document_reports_pointer(tmp_path):
    doc = {"states": [{"key": "a", "kind": "random"}, {"key": "b", "kind": "random"}],
           "edges": [{"from": "a", "to": "b", "numerator": 1, "denominator": 2}], "initial": ["a"],
           "boundary": ["b"]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    code, _, err = run("family", "build", "--model", str(path))
    assert code == 1
    details = json.loads(err)
    assert details["pointer"] == "/states/0" and details["total"] == "1/2"


def test_export_then_ingest(tmp_path):
    path = tmp_path / "fig1a.json"
    assert run("family", "export", "--family", "fig1a", "--depth", "6", "--out", str(path))[0] == 0
    code, out, _ = run("family", "build", "--model", str(path))
    assert code == 0
    doc = json.loads(out)
    assert doc["initial"] == ["fig1a.s.0"]
    assert doc["initial_successors"] == ["fig1a.s.1", "fig1a.r.0"]


def test_exact_on_tree_chain_and_step_lift():
    code, out, _ = run("exact", "--family", "tree-chain", "--strategy", "greedy-mr", "--monitor", "red:h=6")
    assert code == 0 and rows(out)[0]["probability"]
    code, out, _ = run("exact", "--family", "fig1a", "--strategy", "fig1-markov:k=1", "--monitor", "no-sink:h=12")
    assert code == 0
    p = rows(out)[0]["probability"]
    num, den = map(int, p.split("/"))
    assert 0 < num < den


def test_red_curve_pins_greedy_crossing():
    code, out, _ = run("exact", "--family", "tree-chain", "--strategy", "greedy-mr", "--red-curve", "25")
    assert code == 0
    table = rows(out)
    first = next(int(r["N"]) for r in table if float(r["lo_dec"]) > 0.9)
    assert first == 22


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "results"))
    code, out, _ = run("expected-red", "--N", "5")
    assert code == 0 and out == ""
    written = (tmp_path / "results" / "expected-red.csv").read_text()
    assert rows(written)[-1]["below"] == "true"


def test_lemma_checks_and_plots(tmp_path):
    plot = tmp_path / "key.svg"
    code, out, _ = run("check-lemma", "key", "--n", "2", "--grids", "20", "--plot", str(plot))
    assert code == 0 and len(rows(out)) == 47
    assert plot.read_text().lstrip().startswith("<?xml")
    assert run("check-lemma", "calculus", "--points", "100")[0] == 0
    assert run("check-lemma", "death", "--n", "2", "--grids", "5")[0] == 0


def test_simulate_trace():
    code, out, _ = run("simulate", "--family", "tree-chain", "--strategy", "sigma1-onebit", "--steps", "30",
                       "--seed", "2")
    assert code == 0
    table = rows(out)
    assert len(table) == 31 and table[0]["state"] == "treechain.blue.1"


def test_m2_depth_check():
    code, out, _ = run("m2-depth-check", "--depth", "30", "--step", "10")
    assert code == 0
    assert [r["exceptions"] for r in rows(out)] == ["0", "0", "0"]


def test_synthesize_report(tmp_path):
    plot = tmp_path / "schedule.png"
    code, out, _ = run("synthesize", "--family", "fig1a", "--goals", "2", "--extra-levels", "1",
                       "--plot", str(plot))
    assert code == 0
    doc = json.loads(out)
    assert doc["schedule_problems"] == [] and len(doc["schedule"]["levels"]) == 3
    assert doc["proxy"]["m"] == 2
    assert plot.exists()


def test_evaluate_small(tmp_path):
    report_path = tmp_path / "report.json"
    code, out, _ = run("evaluate", "--family", "fig1a", "--goals", "2", "--extra-levels", "1", "--samples", "2000",
                       "--seed", "3", "--traces", "3", "--report", str(report_path))
    assert code == 0
    (row,) = rows(out)
    assert row["strategy"] == "synthesized:eps=1/10"
    assert json.loads(report_path.read_text())["checks"] == {"schedule": 0, "bit_flips": 0, "deviations": 0}


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "countable_mdp.cli", "expected-red", "--N", "2"],
                          capture_output=True, text=True, env={**os.environ, OUTPUT_ENV: ""})
    assert proc.returncode == 0
    assert rows(proc.stdout)[1]["partial_sum"] == "7/10"


def test_rows_carry_experiment_and_digest(tmp_path):
    base = ("estimate", "--family", "fig1a", "--strategy", "fig1-markov:k=1", "--monitor", "no-sink:h=10",
            "--samples", "200")
    _, a, _ = run(*base, "--seed", "1")
    _, b, _ = run(*base, "--seed", "2")
    target = tmp_path / "est.csv"
    run(*base, "--seed", "1", "--out", str(target))
    ra, rb, rc = rows(a)[0], rows(b)[0], rows(target.read_text())[0]
    assert ra["experiment"] == "estimate"
    assert ra["inputs_digest"] != rb["inputs_digest"]
    assert ra["inputs_digest"] == rc["inputs_digest"]
