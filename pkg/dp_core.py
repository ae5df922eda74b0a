"""Bellman operators and solvers for the setup-cost inventory model.

Every solver works on the integer grid [x_min, x_max].  Value tables carry a
linear rule for points below the grid; the inner minimum over order-up-to
levels is a right-to-left running minimum of the G-table, so each sweep costs
O(grid × demand atoms).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from model import (
    COST_RTOL,
    ProblemError,
    ProblemSpec,
    check_assumptions,
    expected_cost_table,
    s_star,
    smallest_argmin,
    transformed_values,
)

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 500_000
RVI_DAMPING = 0.5  # T_λ = (1-λ)I + λT
ROUNDOFF_FACTOR = 64.0  # stopping floor, in units of eps·‖v‖∞
THRESHOLD_RTOL = COST_RTOL
PROGRESS_EVERY = 20_000


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted; carries the last iterate."""

    def __init__(self, message: str, residual: float, iterations: int, solution=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.solution = solution


# --- Tables ---

@dataclass(frozen=True, eq=False)
class ValueTable:
    """Values on [x_min, x_max]; below the grid v(x) = v(x_min) + below_slope·(x_min - x)."""

    x_min: int
    values: np.ndarray
    below_slope: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ProblemError("value table has non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def x_max(self) -> int:
        return self.x_min + self.values.size - 1

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    def at(self, x):
        x = np.asarray(x)
        idx = np.clip(x - self.x_min, 0, self.values.size - 1)
        below = np.maximum(self.x_min - x, 0)
        out = self.values[idx] + self.below_slope * below
        return float(out) if out.ndim == 0 else out

    def shifted(self, delta: float) -> "ValueTable":
        return ValueTable(self.x_min, self.values + delta, self.below_slope)

    @classmethod
    def zeros(cls, p: ProblemSpec) -> "ValueTable":
        return cls(p.x_min, np.zeros(p.n), 0.0)


@dataclass(frozen=True, eq=False)
class GTable:
    alpha: float
    x_min: int
    values: np.ndarray

    def at(self, x) -> float:
        return float(self.values[int(x) - self.x_min])

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_min + self.values.size)


@dataclass(frozen=True, eq=False)
class BellmanSolution:
    alpha: float
    v: ValueTable
    g: GTable
    s: int
    S: int
    iterations: int
    residual: float
    m_alpha: float
    kind: str = "standard"  # or "transformed" (zero unit cost)

    def order_quantity(self, x: int) -> int:
        return self.S - x if x < self.s else 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "s": self.s,
            "S": self.S,
            "iterations": self.iterations,
            "residual": self.residual,
            "m_alpha": self.m_alpha,
            "x_min": self.v.x_min,
            "v": self.v.values.tolist(),
            "G": self.g.values.tolist(),
        }


@dataclass(frozen=True, eq=False)
class AverageSolution:
    w: float
    u: ValueTable
    s: int
    S: int
    acoe_residual: float
    iterations: int = 0
    h_table: Optional[GTable] = None  # H(x) = c̄x + E[h(x-D)] + E[u(x-D)]

    def order_quantity(self, x: int) -> int:
        return self.S - x if x < self.s else 0

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "s": self.s,
            "S": self.S,
            "acoe_residual": self.acoe_residual,
            "iterations": self.iterations,
            "x_min": self.u.x_min,
            "u": self.u.values.tolist(),
            "H": None if self.h_table is None else self.h_table.values.tolist(),
        }


@dataclass(frozen=True, eq=False)
class FiniteStage:
    """Decision stage t (t = 0 is the first period) of a finite-horizon solve."""

    t: int
    v: ValueTable
    g: GTable
    s: int
    S: int
    actions: np.ndarray


# --- Kernel ---

@dataclass(frozen=True, eq=False)
class _Kernel:
    """Precomputed index arithmetic for E[v(x-D)] on the grid."""

    xs: np.ndarray
    idx: np.ndarray
    below: np.ndarray
    probs: np.ndarray

    @classmethod
    def build(cls, p: ProblemSpec) -> "_Kernel":
        xs = p.grid
        shifted = xs[:, None] - p.demand.values[None, :]
        return cls(xs, np.clip(shifted - p.x_min, 0, p.n - 1),
                   np.maximum(p.x_min - shifted, 0).astype(float), p.demand.probs)

    def expect(self, values: np.ndarray, below_slope: float) -> np.ndarray:
        return (values[self.idx] + below_slope * self.below) @ self.probs


def _suffix_min_strict(g: np.ndarray) -> np.ndarray:
    """min_{y > x} g(y), +inf at the right edge."""
    out = np.empty_like(g)
    out[-1] = np.inf
    out[:-1] = np.minimum.accumulate(g[::-1])[::-1][1:]
    return out


def bellman_from_G(g: np.ndarray, K: float, c_unit: float, xs: np.ndarray) -> np.ndarray:
    """min(G(x), K + min_{y>x} G(y)) - c̄x."""
    g = np.asarray(g, dtype=float)
    return np.minimum(g, K + _suffix_min_strict(g)) - c_unit * np.asarray(xs)


def build_G(v: ValueTable, p: ProblemSpec, alpha: float) -> GTable:
    xs = p.grid
    g = p.c_unit * xs + expected_cost_table(p.holding, p.demand, xs)
    if alpha != 0.0:
        g = g + alpha * _Kernel.build(p).expect(v.values, v.below_slope)
    return GTable(float(alpha), p.x_min, g)


def bellman_discounted(v: ValueTable, p: ProblemSpec, alpha: float) -> ValueTable:
    g = build_G(v, p, alpha)
    return ValueTable(p.x_min, bellman_from_G(g.values, p.K, p.c_unit, p.grid), p.c_unit)


def _threshold_indices(g: np.ndarray, K: float) -> Tuple[int, int]:
    S = smallest_argmin(g)
    level = K + g[S]
    s = int(np.argmax(g[: S + 1] <= level + THRESHOLD_RTOL * (1.0 + abs(level))))
    return s, S


def extract_thresholds(g: GTable, K: float) -> Tuple[int, int]:
    s, S = _threshold_indices(g.values, K)
    return g.x_min + s, g.x_min + S


def greedy_actions(g: GTable, K: float) -> np.ndarray:
    """Per-state optimal order quantity read off a G-table; ties do not order."""
    values = g.values
    n = values.size
    best = np.empty(n)
    arg = np.empty(n, dtype=int)
    best[-1], arg[-1] = np.inf, n - 1
    for i in range(n - 2, -1, -1):
        nxt = i + 1
        if values[nxt] <= best[nxt]:
            best[i], arg[i] = values[nxt], nxt
        else:
            best[i], arg[i] = best[nxt], arg[nxt]
    order = K + best < values - THRESHOLD_RTOL * (1.0 + np.abs(values))
    return np.where(order, arg - np.arange(n), 0)


def sS_actions(x_min: int, n: int, s: int, S: int) -> np.ndarray:
    xs = np.arange(x_min, x_min + n)
    return np.where(xs < s, S - xs, 0)


# --- Discounted solvers ---

def _stop_threshold(tol: float, alpha: float, v: np.ndarray) -> float:
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * float(np.abs(v).max(initial=0.0))
    return max(tol * (1.0 - alpha) / (2.0 * alpha), floor)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise ProblemError(f"alpha must be in [0, 1) for discounted solves, got {alpha}")


def _warn_assumptions(p: ProblemSpec, alpha: float) -> None:
    if alpha <= 0.0:
        return
    report = check_assumptions(p, alpha)
    if not report.passed:
        logger.warning("assumption check failed at alpha=%s (witness %s); solving anyway", alpha, report.witness)


def _discounted_loop(p: ProblemSpec, alpha: float, stage: np.ndarray, c_unit: float, below_slope: float,
                     tol: float, max_iter: int, kind: str) -> BellmanSolution:
    kernel = _Kernel.build(p)
    xs = kernel.xs
    v = np.zeros(p.n)
    slope = 0.0  # v_0 = 0 everywhere, below the grid too
    residual = float("inf")
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = stage + alpha * kernel.expect(v, slope) if alpha else stage
        new = bellman_from_G(g, p.K, c_unit, xs)
        residual = float(np.abs(new - v).max())
        v, slope = new, below_slope
        if alpha == 0.0 or residual <= _stop_threshold(tol, alpha, v):
            break
        if iterations % PROGRESS_EVERY == 0:
            logger.debug("%s VI alpha=%s iteration %d residual %.3e", kind, alpha, iterations, residual)
    g = stage + alpha * kernel.expect(v, slope) if alpha else stage
    s, S = _threshold_indices(g, p.K)
    sol = BellmanSolution(
        alpha=float(alpha),
        v=ValueTable(p.x_min, v, slope),
        g=GTable(float(alpha), p.x_min, g),
        s=p.x_min + s,
        S=p.x_min + S,
        iterations=iterations,
        residual=residual,
        m_alpha=float(v.min()),
        kind=kind,
    )
    if alpha and residual > _stop_threshold(tol, alpha, v):
        raise ConvergenceError(
            f"{kind} value iteration did not converge at alpha={alpha} after {iterations} iterations "
            f"(residual {residual:.3e})", residual, iterations, sol)
    logger.debug("%s VI alpha=%s converged in %d iterations: s=%d S=%d", kind, alpha, iterations, sol.s, sol.S)
    return sol


def value_iteration_discounted(p: ProblemSpec, alpha: float, tol: float = DEFAULT_TOL,
                               max_iter: int = DEFAULT_MAX_ITER) -> BellmanSolution:
    """Iterate the discounted Bellman operator from v = 0.

    Stops once the sup-norm change is at most tol·(1-α)/(2α), so the result is
    within tol of the fixed point (a round-off floor applies for α close to 1).
    """
    _check_alpha(alpha)
    _warn_assumptions(p, alpha)
    stage = p.c_unit * p.grid + expected_cost_table(p.holding, p.demand, p.grid)
    return _discounted_loop(p, alpha, stage, p.c_unit, p.c_unit, tol, max_iter, "standard")


def transformed_model_vi(p: ProblemSpec, alpha: float, tol: float = DEFAULT_TOL,
                         max_iter: int = DEFAULT_MAX_ITER) -> BellmanSolution:
    """Zero-unit-cost model with stage cost E[h_α(x-D)]; m_alpha holds m̄_α."""
    _check_alpha(alpha)
    _warn_assumptions(p, alpha)
    stage = transformed_values(p, alpha)
    return _discounted_loop(p, alpha, stage, 0.0, 0.0, tol, max_iter, "transformed")


def finite_horizon(p: ProblemSpec, alpha: float, N: int, terminal: str = "minus_cx") -> List[FiniteStage]:
    """Backward recursion over N periods.

    terminal="zero" charges nothing at the end; terminal="minus_cx" refunds c̄
    per unit of final stock.  Stages are returned in decision order.
    """
    if N < 1:
        raise ProblemError(f"horizon N must be >= 1, got {N}")
    if not 0.0 <= alpha <= 1.0:
        raise ProblemError(f"alpha must be in [0, 1], got {alpha}")
    kernel = _Kernel.build(p)
    xs = kernel.xs
    base = p.c_unit * xs + expected_cost_table(p.holding, p.demand, xs)
    if terminal == "zero":
        v, slope = np.zeros(p.n), 0.0
    elif terminal == "minus_cx":
        v, slope = -p.c_unit * xs.astype(float), p.c_unit
    else:
        raise ProblemError(f"terminal must be 'zero' or 'minus_cx', got {terminal!r}")
    stages = []
    for k in range(1, N + 1):
        g = base + alpha * kernel.expect(v, slope) if alpha else base
        v, slope = bellman_from_G(g, p.K, p.c_unit, xs), p.c_unit
        s, S = _threshold_indices(g, p.K)
        gt = GTable(float(alpha), p.x_min, g)
        stages.append(FiniteStage(N - k, ValueTable(p.x_min, v, slope), gt, p.x_min + s, p.x_min + S,
                                  greedy_actions(gt, p.K)))
    stages.reverse()
    return stages


# --- Average cost ---

def interior_window(p: ProblemSpec) -> Tuple[int, int]:
    """[x_min + 2·max demand, S*_1 + 2·max demand], clipped to the grid."""
    f = transformed_values(p, 1.0)
    S_star = s_star(p, 1.0, f, smallest_argmin(f))
    lo = p.x_min + 2 * p.demand.max_value
    hi = min(S_star + 2 * p.demand.max_value, p.x_max)
    return lo, max(lo, hi)


def relative_value_iteration(p: ProblemSpec, tol: float = DEFAULT_TOL,
                             max_iter: int = DEFAULT_MAX_ITER) -> AverageSolution:
    """Damped relative value iteration for the α = 1 optimality equation."""
    report = check_assumptions(p, 1.0)
    if not report.passed:
        logger.warning("assumption check failed at alpha=1 (witness %s); solving anyway", report.witness)
    kernel = _Kernel.build(p)
    xs = kernel.xs
    base = p.c_unit * xs + expected_cost_table(p.holding, p.demand, xs)
    ref = p.index(p.midpoint)
    u = np.zeros(p.n)
    span = float("inf")
    diff = np.zeros(p.n)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        tu = bellman_from_G(base + kernel.expect(u, p.c_unit), p.K, p.c_unit, xs)
        diff = tu - u
        span = float(diff.max() - diff.min())
        if span <= tol:
            break
        u = u + RVI_DAMPING * diff
        u = u - u[ref]
        if iterations % PROGRESS_EVERY == 0:
            logger.debug("RVI iteration %d span %.3e", iterations, span)
    w = float(0.5 * (diff.max() + diff.min()))
    u = u - u.min()
    h = base + kernel.expect(u, p.c_unit)
    s, S = _threshold_indices(h, p.K)
    gap = np.abs(w + u - bellman_from_G(h, p.K, p.c_unit, xs))
    lo, hi = interior_window(p)
    sol = AverageSolution(
        w=w,
        u=ValueTable(p.x_min, u, p.c_unit),
        s=p.x_min + s,
        S=p.x_min + S,
        acoe_residual=float(gap[lo - p.x_min: hi - p.x_min + 1].max()),
        iterations=iterations,
        h_table=GTable(1.0, p.x_min, h),
    )
    if span > tol:
        raise ConvergenceError(
            f"relative value iteration did not converge after {iterations} iterations (span {span:.3e})",
            span, iterations, sol)
    logger.info("RVI converged in %d iterations: w=%.8f s=%d S=%d", iterations, w, sol.s, sol.S)
    return sol
