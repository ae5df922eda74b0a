#!/usr/bin/env python3
"""Bellman operators, threshold extraction and the three solvers."""

import sys

import numpy as np
import pytest

from conftest import run_as_script
from dp_core import (
    ConvergenceError,
    GTable,
    ValueTable,
    bellman_from_G,
    extract_thresholds,
    finite_horizon,
    greedy_actions,
    interior_window,
    relative_value_iteration,
    sS_actions,
    transformed_model_vi,
    value_iteration_discounted,
)
from model import ProblemError, check_assumptions, expected_cost_table
from policy import SSPolicy, evaluate_average, evaluate_discounted


def test_value_table_extends_linearly_below_grid():
    v = ValueTable(0, np.array([1.0, 2.0, 3.0]), 2.0)
    assert v.at(-2) == 5.0
    assert v.at(1) == 2.0
    assert v.at(np.array([-1, 0, 2])).tolist() == [3.0, 1.0, 3.0]
    assert v.shifted(-1.0).at(-2) == 4.0


def test_bellman_from_G_uses_strict_suffix_minimum():
    g = np.array([10.0, 4.0, 6.0, 1.0, 3.0])
    xs = np.arange(5)
    out = bellman_from_G(g, 2.0, 0.0, xs)
    assert out.tolist() == [3.0, 3.0, 3.0, 1.0, 3.0]


def test_greedy_ties_do_not_order():
    g = GTable(0.5, 0, np.array([6.0, 4.0, 3.0, 4.0]))
    assert greedy_actions(g, 2.0).tolist() == [2, 0, 0, 0]
    assert extract_thresholds(g, 2.0) == (1, 2)
    tie = GTable(0.5, 0, np.array([5.0, 4.0, 3.0, 4.0]))
    assert greedy_actions(tie, 2.0).tolist() == [0, 0, 0, 0]
    assert extract_thresholds(tie, 2.0) == (0, 2)


def test_example38_zero_terminal_never_orders(example38):
    stage = finite_horizon(example38, 0.75, 1, "zero")[0]
    assert stage.t == 0
    assert not np.any(stage.actions)


def test_example38_refund_terminal_gives_sS(example38):
    stage = finite_horizon(example38, 0.75, 1, "minus_cx")[0]
    xs = example38.grid
    assert np.allclose(stage.g.values, 0.25 * xs + 0.5 * np.abs(xs - 1) + 0.75, atol=1e-12)
    assert (stage.s, stage.S) == (-3, 1)
    assert np.array_equal(stage.actions, sS_actions(example38.x_min, example38.n, -3, 1))


def test_finite_horizon_stage_order(canon1):
    stages = finite_horizon(canon1, 0.9, 4)
    assert [s.t for s in stages] == [0, 1, 2, 3]
    with pytest.raises(ProblemError):
        finite_horizon(canon1, 0.9, 0)
    with pytest.raises(ProblemError):
        finite_horizon(canon1, 0.9, 2, "salvage")


def test_alpha_zero_takes_one_step(canon1):
    sol = value_iteration_discounted(canon1, 0.0)
    xs = canon1.grid
    stage = canon1.c_unit * xs + expected_cost_table(canon1.holding, canon1.demand, xs)
    assert sol.iterations == 1
    assert np.allclose(sol.v.values, bellman_from_G(stage, canon1.K, canon1.c_unit, xs))


def test_alpha_outside_range_is_rejected(canon1):
    with pytest.raises(ProblemError):
        value_iteration_discounted(canon1, 1.0)
    with pytest.raises(ProblemError):
        value_iteration_discounted(canon1, -0.1)


def test_vi_matches_policy_evaluation(canon1, convex_pl, quasiconvex):
    for p in (canon1, convex_pl, quasiconvex):
        for alpha in (0.8, 0.9, 0.99):
            sol = value_iteration_discounted(p, alpha)
            report = check_assumptions(p, alpha)
            assert sol.s <= report.r_alpha <= sol.S <= report.S_star_alpha
            assert np.array_equal(greedy_actions(sol.g, p.K), sS_actions(p.x_min, p.n, sol.s, sol.S))
            ev = evaluate_discounted(SSPolicy(sol.s, sol.S), p, alpha)
            assert np.abs(ev.value.values - sol.v.values).max() <= 1e-7 * (1.0 + np.abs(sol.v.values).max())


def test_transformed_model_shares_thresholds(canon1):
    sol = value_iteration_discounted(canon1, 0.9)
    bar = transformed_model_vi(canon1, 0.9)
    assert (bar.s, bar.S) == (sol.s, sol.S)
    xs = canon1.grid
    assert np.allclose(bar.v.values - canon1.c_unit * xs, sol.v.values, atol=1e-7)


def test_convergence_error_carries_last_iterate(canon1):
    with pytest.raises(ConvergenceError) as err:
        value_iteration_discounted(canon1, 0.99, max_iter=3)
    assert err.value.iterations == 3
    assert err.value.residual > 0.0
    assert err.value.solution is not None


def test_relative_value_iteration_on_canon(canon1):
    avg = relative_value_iteration(canon1)
    assert avg.acoe_residual <= 5e-9
    assert avg.u.values.min() == 0.0
    gain = evaluate_average(SSPolicy(avg.s, avg.S), canon1).gain
    assert abs(gain - avg.w) <= 1e-6 * (1.0 + avg.w)
    lo, hi = interior_window(canon1)
    assert lo <= avg.s <= avg.S <= hi


if __name__ == "__main__":
    sys.exit(run_as_script(globals()))
