#!/usr/bin/env python3
"""Policy evaluation, exhaustive search, simulation and the renewal sum."""

import sys

import numpy as np
import pytest

from conftest import run_as_script
from dp_core import relative_value_iteration, transformed_model_vi, value_iteration_discounted
from model import ProblemError, problem_from_dict, problem_to_dict
from policy import (
    ReducibleChainError,
    SSPolicy,
    closed_classes,
    evaluate_average,
    evaluate_discounted,
    exhaustive_sS_search,
    order_path,
    renewal_u_bar,
    simulate,
)


def test_policy_rejects_s_above_S():
    with pytest.raises(ProblemError):
        SSPolicy(5, 2)
    pol = SSPolicy(2, 5)
    assert pol.action(np.array([0, 1, 2, 5])).tolist() == [5, 4, 0, 0]
    assert SSPolicy(2, 5, order_at_s=True).action(2) == 3


def test_four_cycle_gain(example38):
    result = evaluate_average(SSPolicy(0, 3), example38)
    # post-order levels 3, 2, 1, 0 each period, one order of 4 units per cycle
    assert result.gain == pytest.approx((1.0 + 4.0 + 1.0 + 0.5 + 0.0 + 0.5) / 4.0, abs=1e-10)
    support = example38.grid[result.stationary > 1e-9].tolist()
    assert support == [-1, 0, 1, 2]
    assert result.residual < 1e-8


def test_average_rejects_policies_that_leave_the_grid(canon1):
    with pytest.raises(ReducibleChainError):
        evaluate_average(SSPolicy(canon1.x_min, canon1.x_min + 5), canon1)


def test_closed_classes_finds_each_class():
    P = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.5, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
    classes = sorted(c.tolist() for c in closed_classes(P))
    assert classes == [[0], [2, 3]]


def test_discounted_evaluation_solves_the_policy_equation(canon1):
    pol = SSPolicy(-2, 6)
    ev = evaluate_discounted(pol, canon1, 0.9)
    x = 10
    d, q = canon1.demand.values, canon1.demand.probs
    direct = float(canon1.holding(x - d) @ q) + 0.9 * float(ev.value.at(x - d) @ q)
    assert ev.value.at(x) == pytest.approx(direct, rel=1e-10)
    y = -10
    ordered = canon1.K + canon1.c_unit * (6 - y) + float(canon1.holding(6 - d) @ q) \
        + 0.9 * float(ev.value.at(6 - d) @ q)
    assert ev.value.at(y) == pytest.approx(ordered, rel=1e-10)


def test_exhaustive_search_finds_nothing_better(canon1):
    avg = relative_value_iteration(canon1)
    best = exhaustive_sS_search(canon1, "average")
    assert best.value >= avg.w - 1e-8 * (1.0 + avg.w)
    assert best.value == pytest.approx(avg.w, rel=1e-6)
    sol = value_iteration_discounted(canon1, 0.9)
    found = exhaustive_sS_search(canon1, "discounted", alpha=0.9)
    assert found.value >= sol.v.at(found.reference_state) - 1e-7
    with pytest.raises(ProblemError):
        exhaustive_sS_search(canon1, "discounted")


def test_search_window_of_one_pair(canon1):
    found = exhaustive_sS_search(canon1, "discounted", alpha=0.9, s_range=(0, 0), S_range=(6, 6))
    assert (found.policy.s, found.policy.S) == (0, 6)
    assert found.evaluated == 1
    expected = evaluate_discounted(SSPolicy(0, 6), canon1, 0.9).value.at(found.reference_state)
    assert found.value == pytest.approx(expected, abs=1e-12)
    avg = exhaustive_sS_search(canon1, "average", s_range=(0, 0), S_range=(6, 6))
    assert avg.value == pytest.approx(evaluate_average(SSPolicy(0, 6), canon1).gain, rel=1e-10)


def test_discounted_search_agrees_with_value_iteration(canon1, convex_pl, quasiconvex):
    for p in (canon1, convex_pl, quasiconvex):
        for alpha in (0.8, 0.9, 0.99):
            sol = value_iteration_discounted(p, alpha)
            found = exhaustive_sS_search(p, "discounted", alpha=alpha)
            ref = found.reference_state
            optimum = evaluate_discounted(SSPolicy(sol.s, sol.S), p, alpha).value.at(ref)
            allowed = 1e-7 * (1.0 + abs(optimum))
            assert optimum == pytest.approx(sol.v.at(ref), abs=allowed), (alpha, sol.s, sol.S)
            assert found.value >= optimum - allowed, (alpha, found.policy)
            assert found.value <= optimum + allowed


def test_average_evaluation_ignores_grid_enlargement(canon1):
    avg = relative_value_iteration(canon1)
    pol = SSPolicy(avg.s, avg.S)
    doc = problem_to_dict(canon1)
    doc["grid"] = [-30, 30]
    small = problem_from_dict(doc)
    narrow = evaluate_average(pol, small)
    wide = evaluate_average(pol, canon1)
    assert narrow.gain == pytest.approx(wide.gain, abs=1e-9)
    offset = small.x_min - canon1.x_min
    inside = wide.stationary[offset:offset + small.n]
    assert np.allclose(inside, narrow.stationary, atol=1e-10)
    assert wide.stationary.sum() - inside.sum() < 1e-10


def test_order_path_follows_the_rule():
    post, orders = order_path(SSPolicy(2, 5), np.array([1, 1, 1, 1, 2]), 5)
    assert post.tolist() == [5, 4, 3, 2, 5]
    assert orders.tolist() == [0, 0, 0, 0, 4]
    post, orders = order_path(SSPolicy(2, 5), np.array([3, 2, 1]), 0)
    assert post.tolist() == [5, 2, 5]
    assert orders.tolist() == [5, 0, 5]


def test_simulation_is_seeded(canon1):
    pol = SSPolicy(-1, 8)
    a = simulate(pol, canon1, 2000, replications=3, seed=11)
    b = simulate(pol, canon1, 2000, replications=3, seed=11)
    c = simulate(pol, canon1, 2000, replications=3, seed=12)
    assert a.to_dict() == b.to_dict()
    assert a.replication_means != c.replication_means


def test_simulation_agrees_with_exact_gain(canon1):
    avg = relative_value_iteration(canon1)
    pol = SSPolicy(avg.s, avg.S)
    stats = simulate(pol, canon1, 20_000, replications=8, seed=3)
    gain = evaluate_average(pol, canon1).gain
    assert abs(stats.mean_cost_per_period - gain) <= 4.0 * stats.confidence_halfwidth
    single = simulate(pol, canon1, 50_000, seed=3)
    assert single.confidence_halfwidth > 0.0
    assert abs(single.mean_cost_per_period - gain) <= 4.0 * single.confidence_halfwidth


def test_renewal_sum_matches_transformed_values(canon1):
    alpha = 0.9
    bar = transformed_model_vi(canon1, alpha, tol=1e-11)
    u_bar = bar.v.shifted(-bar.m_alpha)
    for x in range(bar.s - 2, bar.s + 8):
        assert renewal_u_bar(canon1, alpha, bar, x) == pytest.approx(u_bar.at(x), abs=1e-6)
    std = value_iteration_discounted(canon1, alpha, tol=1e-11)
    assert renewal_u_bar(canon1, alpha, std, bar.s + 3) == pytest.approx(u_bar.at(bar.s + 3), abs=1e-6)


if __name__ == "__main__":
    sys.exit(run_as_script(globals()))
