#!/usr/bin/env python3
"""The finite-horizon counterexample and the oscillating chain."""

import sys

import numpy as np
import pytest

from conftest import run_as_script
from counterexamples import (
    SPREAD_THRESHOLD,
    TruncationError,
    block_boundary,
    block_centered_schedule,
    default_truncation,
    example38_check,
    example38_problem,
    example62_check,
    example62_relative_values,
    f_alpha,
    oscillation_report,
    suggested_schedule,
    z_hat,
    z_sequence,
)
from model import ProblemError, problem_to_dict
from reports import INCONCLUSIVE


def test_block_boundaries():
    assert [block_boundary(k) for k in range(1, 7)] == [1, 3, 9, 33, 153, 873]


def test_z_sequence_blocks():
    z = z_sequence(40).z
    assert z[:10].tolist() == [0, 1, 1, 0, 0, 0, 0, 0, 0, 1]
    assert np.all(z[9:33] == 1) and np.all(z[33:] == 0)
    assert z_hat(np.array([0, 1, 1, 0])).tolist() == [1, 2, 1, 0]


def test_f_alpha_against_direct_sum():
    for alpha in (0.3, 0.5, 0.9):
        z = z_sequence(2000).z
        direct = (1.0 - alpha) * float(np.sum(z * alpha ** np.arange(z.size)))
        f = f_alpha(alpha)
        assert f.value == pytest.approx(direct, abs=1e-12)
        assert f.bound <= 1e-12
    assert f_alpha(0.5).value == pytest.approx(0.375 + 0.5 ** 9 - 0.5 ** 33, abs=1e-15)
    with pytest.raises(ProblemError):
        f_alpha(1.0)


def test_closed_form_matches_truncated_vi():
    for alpha in (0.5, 0.9, 1.0 - 1.0 / 33.0, 1.0 - 1.0 / 153.0):
        table = example62_relative_values(alpha)
        assert table.agrees, (alpha, table.max_gap)
        u = table.closed_form
        assert u[0] == 0.0 and u[1] == 1.0
        assert table.u(0) == pytest.approx(f_alpha(alpha).value + 1.0, abs=1e-11)
        assert u.min() >= -1e-12 and u.max() <= 2.0 + 1e-12


def test_truncation_must_cover_the_tail():
    with pytest.raises(TruncationError) as err:
        example62_relative_values(0.9, N_trunc=10)
    assert err.value.bound == pytest.approx(0.9 ** 10)
    assert default_truncation(0.5) == 40


def test_example62_report():
    assert example62_check([0.5, 0.9]).passed


def test_oscillation_spread():
    published = oscillation_report(suggested_schedule())
    assert published.check.status == INCONCLUSIVE
    assert 0.0 < published.spread < 0.5
    centered = oscillation_report(block_centered_schedule(5, 8), SPREAD_THRESHOLD)
    assert centered.check.passed
    assert centered.spread >= SPREAD_THRESHOLD
    assert [row[2] for row in centered.rows] == pytest.approx([row[1] + 1.0 for row in centered.rows])


def test_block_centered_alphas_increase():
    alphas = block_centered_schedule(3, 8)
    assert all(0.0 < a < 1.0 for a in alphas)
    assert alphas == sorted(alphas)


def test_example38_instance_matches_bundled_file(example38):
    assert problem_to_dict(example38_problem()) == problem_to_dict(example38)


def test_example38_report():
    report = example38_check()
    assert report.passed, report.witnesses
    names = [part["name"] for part in report.details["parts"]]
    assert len(names) == 4


if __name__ == "__main__":
    sys.exit(run_as_script(globals()))
