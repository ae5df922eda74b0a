#!/usr/bin/env python3
"""Instance validation, expected costs and the assumption checker."""

import itertools
import json
import sys

import numpy as np
import pytest

from conftest import run_as_script
from model import (
    DemandPMF,
    HoldingCost,
    NonConvexHoldingError,
    ProblemError,
    alpha_star_for_convex,
    check_assumptions,
    dump_problem,
    expected_shifted_cost,
    load_problem,
    make_problem,
    problem_from_dict,
    problem_to_dict,
    quasiconvex_witness,
    read_json,
    rescale_problem,
    transformed_expected_cost,
    transformed_values,
)


def test_demand_drops_zero_atoms_and_sorts():
    d = DemandPMF.from_atoms([[3, 0.2], [1, 0.5], [7, 0.0], [2, 0.3]])
    assert d.values.tolist() == [1, 2, 3]
    assert d.mean == pytest.approx(1.7)
    assert d.max_value == 3
    assert d.p_zero == 0.0
    assert d.dense().tolist() == pytest.approx([0.0, 0.5, 0.3, 0.2])


def test_negative_probability_names_the_atom():
    with pytest.raises(ProblemError, match="atom 0"):
        DemandPMF.from_atoms([[1, -0.5], [2, 1.5]])


def test_probabilities_must_sum_to_one():
    with pytest.raises(ProblemError, match="sum"):
        DemandPMF.from_atoms([[1, 0.5], [2, 0.4]])


def test_demand_needs_positive_mass_above_zero():
    with pytest.raises(ProblemError):
        DemandPMF.from_atoms([[0, 1.0]])


def test_holding_tails_are_linear(canon1):
    h = canon1.holding
    assert float(h(-60)) == 180.0
    assert float(h(60)) == 60.0
    assert h(np.array([-1, 0, 2])).tolist() == [3.0, 0.0, 2.0]


def test_problem_rejects_bad_parameters():
    with pytest.raises(ProblemError, match="K"):
        make_problem(0.0, 1.0, [[1, 1.0]], np.abs, -10, 10, 1.0, 1.0)
    with pytest.raises(ProblemError, match="narrow"):
        make_problem(1.0, 1.0, [[3, 1.0]], np.abs, -2, 3, 1.0, 1.0)
    with pytest.raises(ProblemError, match="negative"):
        HoldingCost(0, 2, np.array([1.0, -1.0, 2.0]), 1.0, 1.0)


def test_expected_costs(canon1):
    assert expected_shifted_cost(canon1.holding, canon1.demand, 0) == pytest.approx(3 * 1.7)
    assert expected_shifted_cost(canon1.holding, canon1.demand, 2) == pytest.approx(1.1)
    xs = canon1.grid
    direct = np.array([expected_shifted_cost(canon1.holding, canon1.demand, x) for x in xs])
    expected = direct + 0.1 * 2.0 * xs + 0.9 * 2.0 * 1.7
    assert np.allclose(transformed_values(canon1, 0.9), expected, atol=1e-12)
    view = transformed_expected_cost(canon1, 0.9)
    assert view.at(5) == pytest.approx(expected[5 - canon1.x_min])


def test_quasiconvex_witness_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(300):
        f = rng.integers(0, 6, size=8).astype(float)
        brute = any(f[j] > max(f[i], f[k]) for i, j, k in itertools.combinations(range(f.size), 3))
        witness = quasiconvex_witness(f)
        assert (witness is not None) == brute
        if witness is not None:
            i, j, k = witness
            assert i < j < k and f[j] > max(f[i], f[k])


def test_assumptions_on_canon(canon1):
    report = check_assumptions(canon1, 1.0)
    assert report.passed
    assert report.r_alpha == 2
    assert report.S_star_alpha == 13
    assert report.strictly_decreasing_left_of_r
    assert report.to_dict()["left_limit"] == "inf"


def test_assumptions_on_quasiconvex_instance(quasiconvex):
    for alpha in (0.5, 0.9, 0.999, 1.0):
        assert check_assumptions(quasiconvex, alpha).passed


def test_assumption_failure_reports_witness_in_grid_units():
    table = np.abs(np.arange(-10, 11)).astype(float)
    table[15] = 20.0  # bump at x = 5
    p = make_problem(1.0, 1.0, [[1, 1.0]], lambda x: table[x + 10], -10, 10, 1.0, 1.0)
    report = check_assumptions(p, 1.0)
    assert not report.quasiconvex and not report.passed
    i, j, k = report.witness
    assert i < j < k and j == 6


def test_alpha_star_bound(canon1, quasiconvex):
    assert alpha_star_for_convex(canon1) == 0.0
    with pytest.raises(NonConvexHoldingError) as err:
        alpha_star_for_convex(quasiconvex)
    assert quasiconvex.holding.x_min + err.value.index == -6


def test_convex_holding_passes_above_alpha_star(canon1, convex_pl):
    for p in (canon1, convex_pl):
        floor = alpha_star_for_convex(p)
        for alpha in np.linspace(floor, 1.0, 12)[1:]:
            assert check_assumptions(p, float(alpha)).passed, alpha
    # left slope 0.5 below c_unit = 1 puts the bound at 1/2
    p = make_problem(2.0, 1.0, [[1, 0.6], [2, 0.4]], lambda x: np.where(x >= 0, x, -0.5 * x),
                     -30, 30, 0.5, 1.0)
    assert alpha_star_for_convex(p) == pytest.approx(0.5)
    for alpha in (0.51, 0.6, 0.75, 0.9, 0.99, 1.0):
        assert check_assumptions(p, alpha).passed, alpha
    assert not check_assumptions(p, 0.4).left_limit_ok


def test_r_alpha_is_monotone_in_alpha(canon1, convex_pl, quasiconvex):
    for p in (canon1, convex_pl, quasiconvex):
        rs = [check_assumptions(p, float(a)).r_alpha for a in np.linspace(0.3, 1.0, 15)]
        assert rs == sorted(rs), rs
    assert check_assumptions(canon1, 1.0).r_alpha == 2


def test_rescale_refines_the_grid(canon1):
    fine = rescale_problem(canon1, 2)
    assert (fine.x_min, fine.x_max) == (-100, 100)
    assert fine.demand.values.tolist() == [2, 4, 6]
    assert fine.c_unit == 1.0 and fine.K == canon1.K
    assert float(fine.holding(-99)) == pytest.approx(148.5)
    assert fine.holding.left_slope == 1.5
    with pytest.raises(ProblemError):
        rescale_problem(canon1, 0)


def test_json_round_trip(canon1, tmp_path):
    path = tmp_path / "p.json"
    dump_problem(canon1, path)
    back = load_problem(path)
    assert problem_to_dict(back) == problem_to_dict(canon1)


def test_json_errors_carry_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "K": 1,\n  "c_unit": }', encoding="utf-8")
    with pytest.raises(ProblemError, match="line 3"):
        read_json(path)
    doc = problem_to_dict(make_problem(1.0, 1.0, [[1, 1.0]], np.abs, -10, 10, 1.0, 1.0))
    del doc["K"]
    with pytest.raises(ProblemError, match="'K'"):
        problem_from_dict(json.loads(json.dumps(doc)))


if __name__ == "__main__":
    sys.exit(run_as_script(globals()))
