#!/usr/bin/env python3
"""Exit codes and output files of every subcommand."""

import json
import sys

import numpy as np

from conftest import PROBLEMS, run_as_script
import main
from dp_core import ConvergenceError
from model import make_problem, problem_to_dict

CANON = str(PROBLEMS / "canon1.json")


def _write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def test_validate_canon(tmp_path):
    assert main.main(["validate", "--problem", CANON, "--out", str(tmp_path)]) == main.EXIT_OK
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["passed"] and report["r_alpha"] == 2


def test_validate_negative_probability(tmp_path):
    doc = json.loads((PROBLEMS / "canon1.json").read_text())
    doc["demand"] = [[1, -0.5], [2, 1.5]]
    path = _write(tmp_path / "bad.json", doc)
    assert main.main(["validate", "--problem", path, "--out", str(tmp_path)]) == main.EXIT_USAGE


def test_validate_non_quasiconvex(tmp_path):
    table = np.abs(np.arange(-10, 11)).astype(float)
    table[15] = 20.0
    p = make_problem(1.0, 1.0, [[1, 1.0]], lambda x: table[x + 10], -10, 10, 1.0, 1.0)
    path = _write(tmp_path / "bump.json", problem_to_dict(p))
    assert main.main(["validate", "--problem", path, "--out", str(tmp_path)]) == main.EXIT_CHECK
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["witness"] is not None


def test_parse_error_is_usage(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{ not json", encoding="utf-8")
    assert main.main(["solve", "--problem", str(path), "--out", str(tmp_path)]) == main.EXIT_USAGE


def test_solve_discounted_writes_tables(tmp_path):
    code = main.main(["solve", "--alpha", "0.9", "--problem", CANON, "--out", str(tmp_path)])
    assert code == main.EXIT_OK
    lines = (tmp_path / "discounted.csv").read_text().splitlines()
    assert lines[0] == "x,v,G,action"
    assert len(lines) == 102
    doc = json.loads((tmp_path / "discounted.json").read_text())
    assert doc["s"] <= doc["r_alpha"] <= doc["S"] <= doc["S_star_alpha"]


def test_solve_average(tmp_path):
    code = main.main(["solve", "--average", "--problem", CANON, "--out", str(tmp_path), "--format", "json"])
    assert code == main.EXIT_OK
    doc = json.loads((tmp_path / "average.json").read_text())
    assert doc["acoe_residual"] <= 5e-9
    assert not (tmp_path / "average.csv").exists()


def test_bad_alpha_and_bad_flags_are_usage_errors(tmp_path):
    assert main.main(["solve", "--alpha", "1.5", "--problem", CANON, "--out", str(tmp_path)]) == main.EXIT_USAGE
    try:
        main.main(["solve", "--no-such-flag"])
    except SystemExit as e:
        assert e.code == main.EXIT_USAGE
    else:
        raise AssertionError("argparse accepted an unknown flag")
    assert main.main(["sweep", "--schedule", "0.9,0.5", "--problem", CANON,
                      "--out", str(tmp_path)]) == main.EXIT_USAGE


def test_non_convergence_exit_code(tmp_path, monkeypatch):
    def stalled(*args, **kwargs):
        raise ConvergenceError("stalled", 0.5, 7)

    monkeypatch.setattr(main, "value_iteration_discounted", stalled)
    code = main.main(["solve", "--alpha", "0.9", "--problem", CANON, "--out", str(tmp_path)])
    assert code == main.EXIT_CONVERGENCE


def test_outputs_are_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main.main(["solve", "--alpha", "0.8", "--problem", CANON, "--out", str(out)]) == main.EXIT_OK
        assert main.main(["simulate", "--s", "0", "--S", "9", "--horizon", "5000", "--seed", "4",
                          "--problem", CANON, "--out", str(out)]) == main.EXIT_OK
    for name in ("discounted.csv", "discounted.json", "simulate.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_evaluate(tmp_path):
    code = main.main(["evaluate", "--s", "0", "--S", "9", "--average", "--problem", CANON, "--out", str(tmp_path)])
    assert code == main.EXIT_OK
    doc = json.loads((tmp_path / "evaluate.json").read_text())
    assert doc["policy"] == {"s": 0, "S": 9, "order_at_s": False}
    assert doc["gain"] > 0.0
    bad = main.main(["evaluate", "--s", "-50", "--S", "0", "--average", "--problem", CANON,
                     "--out", str(tmp_path)])
    assert bad == main.EXIT_USAGE


def test_examples(tmp_path):
    assert main.main(["examples", "--out", str(tmp_path)]) == main.EXIT_OK
    header = (tmp_path / "oscillation.csv").read_text().splitlines()[0]
    assert header == "alpha,f_alpha,u0,truncation_bound"


def test_leadtime(tmp_path):
    path = str(PROBLEMS / "leadtime_small.json")
    code = main.main(["leadtime", "--L", "1", "--horizon", "50000", "--replications", "4",
                      "--problem", path, "--out", str(tmp_path)])
    doc = json.loads((tmp_path / "leadtime.json").read_text())
    identity = doc["checks"][0]
    assert identity["name"] == "lead-time reduction identity" and identity["status"] == "pass"
    sim = doc["simulation"]
    assert abs(sim["mean_cost_per_period"] - doc["average"]["w"]) <= 4.0 * sim["confidence_halfwidth"]
    assert code in (main.EXIT_OK, main.EXIT_CHECK)


def test_sweep_default_schedule(tmp_path):
    code = main.main(["sweep", "--jobs", "4", "--problem", CANON, "--out", str(tmp_path)])
    assert code == main.EXIT_OK
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("alpha,s_alpha,S_alpha,r_alpha,S_star_alpha")
    assert len(rows) == 13


if __name__ == "__main__":
    sys.exit(run_as_script(globals()))
