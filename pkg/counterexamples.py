"""Two worked counterexamples, rebuilt as executable checks.

example38: with no terminal cost a one-period problem can be optimal without
ordering at all, while the refund terminal cost -c̄x restores (s,S) structure.

example62: a deterministic chain whose discounted relative value at state 0
is 1 + f(α), where f averages a 0/1 sequence built from factorial-length
blocks.  f keeps oscillating as α ↑ 1, so u_α(0) has no limit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from dp_core import finite_horizon, greedy_actions, sS_actions, value_iteration_discounted
from model import ProblemError, ProblemSpec, make_problem, quasiconvex_witness, transformed_values
from reports import INCONCLUSIVE, CheckReport, combine, status_of

logger = logging.getLogger(__name__)

# --- Configuration ---
TAIL_TOL = 1e-12
VI_STATE_CAP = 200_000  # truncated chains longer than this skip the VI cross-check
SPREAD_THRESHOLD = 0.25
EXAMPLE38_ALPHA = 0.75
EXAMPLE38_GRID = (-20, 20)
MAX_BLOCKS = 40


class TruncationError(ValueError):
    def __init__(self, message: str, bound: float):
        super().__init__(message)
        self.bound = bound


# --- The 0/1 sequence ---

def block_boundary(k: int) -> int:
    """D(k) = 1! + 2! + ... + k!."""
    return sum(math.factorial(i) for i in range(1, k + 1))


def one_blocks(limit: Optional[int] = None):
    """Half-open index ranges [D(2k-1), D(2k)) on which z is 1."""
    blocks = []
    for k in range(1, MAX_BLOCKS):
        a, b = block_boundary(2 * k - 1), block_boundary(2 * k)
        if limit is not None and a > limit:
            break
        blocks.append((a, b))
    return blocks


@dataclass(frozen=True, eq=False)
class ZSequence:
    horizon: int
    z: np.ndarray
    boundaries: List[int]


def z_sequence(N: int) -> ZSequence:
    z = np.zeros(N, dtype=np.int64)
    for a, b in one_blocks(N):
        z[a:min(b, N)] = 1
    k, bounds = 1, []
    while block_boundary(k) < N:
        bounds.append(block_boundary(k))
        k += 1
    return ZSequence(N, z, bounds)


def z_hat(z: np.ndarray) -> np.ndarray:
    """Per-period costs z_0 + 1, then z_n - z_{n-1} + 1."""
    out = z + 1
    out[1:] -= z[:-1]
    return out


def _tail_sum(alpha: float, n: int, stop: Optional[int] = None) -> float:
    """(1-α) Σ_{i>=0} z_{n+i} α^i, cut at index stop (exclusive) if given."""
    total = 0.0
    for a, b in one_blocks(stop):
        lo = max(a, n)
        hi = b if stop is None else min(b, stop)
        if hi <= lo:
            continue
        total += alpha ** (lo - n) - alpha ** (hi - n)
        if alpha ** (hi - n) == 0.0:
            break
    return total


@dataclass(frozen=True)
class FValue:
    alpha: float
    value: float
    bound: float
    terms: int


def terms_needed(alpha: float, tail_tol: float) -> int:
    """Smallest N with α^{N+1} <= tail_tol."""
    if alpha == 0.0:
        return 0
    return max(int(math.ceil(math.log(tail_tol) / math.log(alpha))) - 1, 0)


def f_alpha(alpha: float, tail_tol: float = TAIL_TOL) -> FValue:
    """f(α) = (1-α) Σ z_i α^i summed through index N, with tail bound α^{N+1}."""
    if not 0.0 <= alpha < 1.0:
        raise ProblemError(f"alpha must be in [0, 1), got {alpha}")
    N = terms_needed(alpha, tail_tol)
    value = _tail_sum(alpha, 0, N + 1)
    return FValue(float(alpha), value, alpha ** (N + 1), N)


# --- The chain ---

@dataclass(frozen=True, eq=False)
class ChainTable:
    alpha: float
    N_trunc: int
    states: np.ndarray  # -2, -1, 0, ..., N_trunc
    closed_form: np.ndarray
    vi: Optional[np.ndarray]
    max_gap: Optional[float]
    agrees: Optional[bool]

    def u(self, n: int) -> float:
        return float(self.closed_form[n + 2])


def default_truncation(alpha: float) -> int:
    if alpha == 0.0:
        return 1
    return max(int(math.ceil(math.log(TAIL_TOL) / math.log(alpha))), 1)


def _closed_form(alpha: float, N: int) -> np.ndarray:
    z = z_sequence(N + 1).z
    g = np.empty(N + 1)
    g[N] = _tail_sum(alpha, N)
    for n in range(N - 1, -1, -1):
        g[n] = (1.0 - alpha) * z[n] + alpha * g[n + 1]
    u = np.empty(N + 3)
    u[0], u[1] = 0.0, 1.0
    u[2] = g[0] + 1.0
    u[3:] = g[1:] - z[:-1] + 1.0
    return u


def _truncated_vi(alpha: float, N: int) -> np.ndarray:
    """VI on states -2, -1, 0..N with N absorbing at cost 1 per period; returns v - min v."""
    costs = z_hat(z_sequence(N).z).astype(float)
    v = np.zeros(N + 3)  # index i is state i - 2
    while True:
        new = np.empty_like(v)
        new[0] = alpha * v[1]
        new[1] = 1.0 + alpha * min(v[1], v[2])
        new[2:-1] = costs + alpha * v[3:]
        new[-1] = 1.0 + alpha * v[-1]
        change = float(np.abs(new - v).max())
        v = new
        if change <= max(1e-11 * (1.0 - alpha), 8 * np.finfo(float).eps * float(v.max())):
            break
    return v - v.min()


def example62_relative_values(alpha: float, N_trunc: Optional[int] = None) -> ChainTable:
    """u_α over {-2, -1, 0, ..., N_trunc} in closed form, cross-checked by truncated VI.

    The truncated chain errs by at most α^{N_trunc - n} at state n >= 0.
    """
    if not 0.0 <= alpha < 1.0:
        raise ProblemError(f"alpha must be in [0, 1), got {alpha}")
    needed = default_truncation(alpha)
    N = needed if N_trunc is None else int(N_trunc)
    if N < needed:
        raise TruncationError(f"N_trunc={N} leaves a tail bound of {alpha ** N:.3e}; need N >= {needed}",
                              alpha ** N)
    closed = _closed_form(alpha, N)
    states = np.arange(-2, N + 1)
    if N > VI_STATE_CAP:
        logger.info("alpha=%s: %d states, skipping the VI cross-check", alpha, N)
        return ChainTable(float(alpha), N, states, closed, None, None, None)
    vi = _truncated_vi(alpha, N)
    allowance = alpha ** (N - np.maximum(states, 0)) + 1e-10
    gap = np.abs(vi - closed)
    agrees = bool(np.all(gap <= allowance))
    if not agrees:
        logger.error("alpha=%s: closed form and truncated VI disagree at state %d",
                     alpha, int(states[int(np.argmax(gap - allowance))]))
    return ChainTable(float(alpha), N, states, closed, vi, float(gap.max()), agrees)


def example62_check(alphas: Sequence[float]) -> CheckReport:
    parts = []
    for alpha in alphas:
        table = example62_relative_values(alpha)
        f = f_alpha(alpha)
        u = table.closed_form
        witnesses = []
        if table.agrees is False:
            witnesses.append({"alpha": alpha, "issue": "truncated VI disagrees", "gap": table.max_gap})
        if u.min() < -1e-12 or u.max() > 2.0 + 1e-12:
            witnesses.append({"alpha": alpha, "issue": "u outside [0, 2]"})
        if u[0] != 0.0 or u[1] != 1.0 or abs(u[2] - (f.value + 1.0)) > f.bound + 1e-12:
            witnesses.append({"alpha": alpha, "issue": "u(-2), u(-1), u(0) off their closed forms"})
        parts.append(CheckReport(f"chain alpha={alpha}", status_of(not witnesses),
                                 {"N_trunc": table.N_trunc, "vi_checked": table.vi is not None,
                                  "max_gap": table.max_gap, "f": f.value}, witnesses))
    return combine("oscillating chain", parts)


# --- Schedules and the oscillation table ---

def suggested_schedule() -> List[float]:
    return [1.0 - 1.0 / block_boundary(k) for k in range(2, 7)]


def block_centered_schedule(first_block: int, last_block: int) -> List[float]:
    """α maximizing α^a - α^b on each block [a, b) = [D(j-1), D(j)), j = first..last."""
    out = []
    for j in range(first_block, last_block + 1):
        a, b = block_boundary(j - 1), block_boundary(j)
        out.append((a / b) ** (1.0 / (b - a)))
    return out


@dataclass(frozen=True)
class OscillationReport:
    rows: List[list]  # alpha, f_alpha, u0, truncation_bound
    spread: float
    check: CheckReport

    def to_dict(self) -> dict:
        return {"rows": self.rows, "spread": self.spread, "check": self.check.to_dict()}


def oscillation_report(alphas: Sequence[float], min_spread: Optional[float] = None) -> OscillationReport:
    rows = []
    for alpha in alphas:
        f = f_alpha(alpha)
        rows.append([float(alpha), f.value, f.value + 1.0, f.bound])
    values = [r[1] for r in rows]
    spread = max(values) - min(values) if values else 0.0
    details = {"spread": spread, "min_spread": min_spread}
    if min_spread is None:
        check = CheckReport("f spread", INCONCLUSIVE, details)
    else:
        ok = spread >= min_spread
        check = CheckReport("f spread", status_of(ok), details, [] if ok else [{"spread": spread}])
    return OscillationReport(rows, spread, check)


# --- Finite-horizon counterexample ---

def example38_problem() -> ProblemSpec:
    lo, hi = EXAMPLE38_GRID
    return make_problem(1.0, 1.0, [[1, 1.0]], lambda x: 0.5 * np.abs(x), lo, hi, 0.5, 0.5)


def _one_period_costs(p: ProblemSpec, alpha: float, terminal: str, x: int) -> np.ndarray:
    """Cost of each order quantity a = 0..x_max-x from state x over one period."""
    a = np.arange(0, p.x_max - x + 1)
    y = x + a
    cost = np.where(a > 0, p.K + p.c_unit * a, 0.0) + p.holding(y - 1)
    if terminal == "minus_cx":
        cost = cost - alpha * p.c_unit * (y - 1)
    return cost


def example38_check() -> CheckReport:
    p = example38_problem()
    alpha = EXAMPLE38_ALPHA
    xs = p.grid
    parts = []

    zero = finite_horizon(p, alpha, 1, "zero")[0]
    ordering = xs[zero.actions != 0]
    strict = [int(x) for x in xs
              if not np.all(_one_period_costs(p, alpha, "zero", x)[1:] > _one_period_costs(p, alpha, "zero", x)[0])]
    parts.append(CheckReport("no order is optimal without terminal cost",
                             status_of(ordering.size == 0 and not strict),
                             {"ordering_states": ordering.tolist()}, strict))

    refund = finite_horizon(p, alpha, 1, "minus_cx")[0]
    rule = sS_actions(p.x_min, p.n, refund.s, refund.S)
    mismatch = xs[refund.actions != rule].tolist()
    enum_bad = []
    for x in xs:
        costs = _one_period_costs(p, alpha, "minus_cx", int(x))
        chosen = rule[int(x) - p.x_min]
        if costs[chosen] > costs.min() + 1e-10:
            enum_bad.append(int(x))
    parts.append(CheckReport("terminal refund gives an (s,S) first stage",
                             status_of(not mismatch and not enum_bad and refund.s < refund.S),
                             {"s": refund.s, "S": refund.S}, mismatch + enum_bad))

    h_alpha = transformed_values(p, alpha)
    expected = 0.5 * np.abs(xs - 1) + 0.25 * xs + 0.75
    formula_ok = bool(np.allclose(h_alpha, expected, rtol=0.0, atol=1e-12))
    convex = bool(np.all(np.diff(h_alpha, 2) >= -1e-12)) and quasiconvex_witness(h_alpha) is None
    parts.append(CheckReport("transformed cost is 0.5|x-1| + 0.25x + 0.75 and convex",
                             status_of(formula_ok and convex), {"formula": formula_ok, "convex": convex}))

    sol = value_iteration_discounted(p, alpha, 1e-10)
    greedy = greedy_actions(sol.g, p.K)
    rule = sS_actions(p.x_min, p.n, sol.s, sol.S)
    off = xs[greedy != rule].tolist()
    parts.append(CheckReport("infinite horizon has an (s,S) optimum", status_of(not off),
                             {"s": sol.s, "S": sol.S}, off))
    return combine("finite-horizon counterexample", parts)
