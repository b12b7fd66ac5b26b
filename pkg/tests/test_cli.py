import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from epcag.cli import PROBLEM_SCHEMA, REPORT_SCHEMA, read_csv, run, write_csv

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def load(name):
    return json.loads((PROBLEMS / name).read_text())


def dump(tmp_path, d, name="problem.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def report(out):
    return json.loads((out / "report.json").read_text())


@pytest.mark.parametrize("name", sorted(p.name for p in PROBLEMS.glob("*.json")))
def test_shipped_problems_validate(name):
    jsonschema.validate(load(name), PROBLEM_SCHEMA)


def test_check_scalar_example(tmp_path):
    assert run(["check", "--problem", str(PROBLEMS / "scalar.json"), "--out", str(tmp_path)]) == 0
    r = report(tmp_path)
    assert r["results"]["margin"] == pytest.approx(0.5)
    assert r["results"]["all_pass"]
    assert all(r["results"]["flags"].values())


def test_malformed_problem_names_path(tmp_path, capsys):
    d = load("scalar.json")
    d["f"]["bogus"] = 1
    assert run(["check", "--problem", str(dump(tmp_path, d)), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("validation error: f: ")
    assert "bogus" in err
    d = load("scalar.json")
    d["f"]["C"] = "x"
    assert run(["check", "--problem", str(dump(tmp_path, d)), "--out", str(tmp_path)]) == 1
    assert "f/C" in capsys.readouterr().err


def test_bad_override_rejected(tmp_path):
    p = str(PROBLEMS / "scalar.json")
    assert run(["solve-ap", "--problem", p, "--out", str(tmp_path), "--tol", "-1"]) == 1
    assert run(["solve-ap", "--problem", p, "--out", str(tmp_path), "--core", "3", "1"]) == 1


def test_non_contractive_exit_two(tmp_path):
    d = load("scalar.json")
    d["f"]["C"] = [[[1.5]]]
    assert run(["solve-ap", "--problem", str(dump(tmp_path, d)), "--out", str(tmp_path)]) == 2
    r = report(tmp_path)
    assert r["status"] == "failed"
    assert r["failed_condition"] == "contraction"
    jsonschema.validate(r, REPORT_SCHEMA)


def test_solve_then_simulate_tail_agreement(tmp_path):
    p = str(PROBLEMS / "quasiperiodic.json")
    a, b = tmp_path / "ap", tmp_path / "sim"
    assert run(["solve-ap", "--problem", p, "--out", str(a)]) == 0
    assert run(["simulate", "--problem", p, "--out", str(b),
                "--compare", str(a / "solution.csv")]) == 0
    cmp = report(b)["results"]["compare"]
    assert cmp["points"] > 100
    assert cmp["t_range"][0] >= 40.0
    assert cmp["max_diff"] < 1e-4


def test_rerun_from_report_is_bit_identical(tmp_path):
    p = str(PROBLEMS / "mixed.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["solve-ap", "--problem", p, "--out", str(a), "--tol", "1e-9"]) == 0
    r = report(a)
    jsonschema.validate(r, REPORT_SCHEMA)
    assert r["config"]["problem"] == load("mixed.json")
    assert run(["solve-ap", "--problem", str(a / "report.json"), "--out", str(b)]) == 0
    assert (a / "solution.csv").read_bytes() == (b / "solution.csv").read_bytes()
    assert report(b)["config"] == r["config"]


def test_csv_full_precision_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    t = np.sort(rng.normal(size=20))
    x = rng.normal(size=(20, 2))
    write_csv(tmp_path / "s.csv", t, x, np.arange(20))
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "t,x_1,x_2,interval_index"
    t2, x2 = read_csv(tmp_path / "s.csv")[:2]
    assert np.array_equal(t, t2) and np.array_equal(x, x2)


def test_logistic_command(tmp_path):
    assert run(["logistic", "--problem", str(PROBLEMS / "logistic.json"), "--out", str(tmp_path)]) == 0
    r = report(tmp_path)["results"]
    assert r["M_a"] == 3.0
    assert (r["K"], r["sigma"], r["mu"]) == pytest.approx((1.0, 2.0, 0.05))
    assert r["conditions"]["passed"]
    assert r["zero_solution"] is True
    assert r["simulation"]["min"] > 0


def test_sequence_command(tmp_path):
    assert run(["sequence", "--problem", str(PROBLEMS / "sequence.json"), "--out", str(tmp_path)]) == 0
    assert 21 in report(tmp_path)["results"]["almost_periods"]["periods"]


def test_stability_command(tmp_path):
    assert run(["stability", "--problem", str(PROBLEMS / "stability.json"), "--out", str(tmp_path),
                "--trials", "8"]) == 0
    s = report(tmp_path)["results"]["stability"]
    assert s["zeta"] == pytest.approx(0.67026, abs=1e-5)
    assert s["passed"]


def test_stability_seed_determinism(tmp_path):
    p = str(PROBLEMS / "stability.json")
    outs = []
    for k in range(2):
        o = tmp_path / str(k)
        assert run(["stability", "--problem", p, "--out", str(o), "--trials", "4", "--seed", "7"]) == 0
        outs.append(report(o)["results"]["stability"]["trial_margins"])
    assert outs[0] == outs[1]
