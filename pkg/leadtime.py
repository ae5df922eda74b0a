"""Positive lead times and their reduction to the zero-lead-time model.

An order placed now arrives L periods later.  Tracking the inventory position
y = on-hand + pending turns the problem into the zero-lead-time model with
holding cost h*(y) = E[h^L(y - D_1 - ... - D_L)].  This module builds the
reduced instance, the cost offset of the first L periods, an exact value
iteration on the (on-hand, pipeline) state for small instances, and a
pipeline simulator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from dp_core import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, value_iteration_discounted
from model import DemandPMF, HoldingCost, ProblemError, ProblemSpec, problem_from_dict, read_json
from policy import SSPolicy, draw_demand, order_path, summarize
from reports import CheckReport, status_of

logger = logging.getLogger(__name__)

# --- Configuration ---
MAX_AUGMENTED_L = 2
AUGMENTED_STATE_CAP = 200_000
OVERFLOW_LIMIT = 1e150  # h* values beyond this count as infinite
IDENTITY_TOL = 1e-6


class InfiniteCostError(ProblemError):
    """The convolved holding cost is not finite on the grid."""


class StateSpaceTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LeadTimeSpec:
    base: ProblemSpec
    L: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ProblemError(f"lead time L must be a positive integer, got {self.L}")
        object.__setattr__(self, "L", int(self.L))


@dataclass(frozen=True)
class PipelineState:
    on_hand: int
    pending: Tuple[int, ...]  # oldest first; pending[0] arrives next

    def __post_init__(self):
        object.__setattr__(self, "pending", tuple(int(q) for q in self.pending))
        if any(q < 0 for q in self.pending):
            raise ProblemError("pending orders must be nonnegative")

    @property
    def position(self) -> int:
        return self.on_hand + sum(self.pending)


def leadtime_from_dict(doc: dict) -> LeadTimeSpec:
    if "L" not in doc:
        raise ProblemError("lead-time problem: missing field 'L'")
    return LeadTimeSpec(problem_from_dict(doc), doc["L"])


def load_leadtime(path, L: Optional[int] = None) -> LeadTimeSpec:
    doc = read_json(path)
    if L is not None:
        doc = dict(doc, L=L)
    return leadtime_from_dict(doc)


def convolve_demand(d: DemandPMF, L: int) -> DemandPMF:
    """Distribution of D_1 + ... + D_L."""
    if L < 1:
        raise ProblemError(f"L must be >= 1, got {L}")
    base = d.dense()
    out = base
    for _ in range(L - 1):
        out = np.convolve(out, base)
    return DemandPMF.from_dense(out)


def reduce(spec: LeadTimeSpec, enlarge: bool = True) -> ProblemSpec:
    """Zero-lead-time instance on the inventory position with holding cost h*.

    h* is tabulated on [h.x_min, h.x_max + L·max demand]; outside that range it
    is linear with the slopes of h^L.  The grid is enlarged left by
    L·max demand unless enlarge is False.
    """
    base, L = spec.base, spec.L
    h = base.holding
    total = convolve_demand(base.demand, L)
    xs = np.arange(h.x_min, h.x_max + L * base.demand.max_value + 1)
    table = h(xs[:, None] - total.values[None, :]) @ total.probs
    if not np.all(np.isfinite(table)) or np.abs(table).max() > OVERFLOW_LIMIT:
        raise InfiniteCostError("convolved holding cost h* is not finite on the grid")
    holding = HoldingCost(int(xs[0]), int(xs[-1]), table, h.left_slope, h.right_slope)
    x_min = base.x_min - L * base.demand.max_value if enlarge else base.x_min
    reduced = ProblemSpec(base.K, base.c_unit, base.demand, holding, x_min, base.x_max)
    logger.debug("reduced L=%d instance to grid [%d, %d]", L, reduced.x_min, reduced.x_max)
    return reduced


def offset(spec: LeadTimeSpec, alpha: float, state: PipelineState) -> float:
    """Discounted cost of the first L periods, fixed by the pipeline already in transit.

    Period t pays K·1{q_t > 0} + c̄q_t for the arriving order q_t and
    E[h^L(x_0 + q_0 + ... + q_t - D_1 - ... - D_{t+1})].
    """
    base = spec.base
    if len(state.pending) != spec.L:
        raise ProblemError(f"pipeline must hold exactly L={spec.L} orders")
    total, arrived = 0.0, 0
    for t, q in enumerate(state.pending):
        arrived += q
        sums = convolve_demand(base.demand, t + 1)
        hold = float(base.holding(state.on_hand + arrived - sums.values) @ sums.probs)
        total += alpha ** t * ((base.K if q > 0 else 0.0) + base.c_unit * q + hold)
    return total


@dataclass(frozen=True, eq=False)
class AugmentedSolution:
    alpha: float
    L: int
    states: np.ndarray  # rows (on_hand, pending_0, ..., pending_{L-1})
    values: np.ndarray
    iterations: int
    residual: float
    x_lo: int
    y_max: int

    def value(self, state: PipelineState) -> float:
        key = (state.on_hand,) + state.pending
        match = np.nonzero(np.all(self.states == np.array(key), axis=1))[0]
        if match.size == 0:
            raise ProblemError(f"pipeline state {key} is outside the augmented grid")
        return float(self.values[match[0]])


def _augmented_states(L: int, x_lo: int, y_top: int, cap: int):
    amax = y_top - x_lo
    grids = np.meshgrid(np.arange(x_lo, y_top + 1), *[np.arange(amax + 1)] * L, indexing="ij")
    size = grids[0].size
    if size > cap * 8:
        raise StateSpaceTooLargeError(f"augmented state grid has {size} raw points, cap is {cap}")
    states = np.stack([g.ravel() for g in grids], axis=1)
    states = states[states.sum(axis=1) <= y_top]
    if states.shape[0] > cap:
        raise StateSpaceTooLargeError(f"augmented state space has {states.shape[0]} states, cap is {cap}")
    return states, amax


def augmented_vi(spec: LeadTimeSpec, alpha: float, tol: float = DEFAULT_TOL, x_lo: Optional[int] = None,
                 y_max: Optional[int] = None, max_iter: int = DEFAULT_MAX_ITER,
                 cap: int = AUGMENTED_STATE_CAP) -> AugmentedSolution:
    """Value iteration on (on-hand, pipeline) states; orders keep the position <= y_max.

    Next on-hand levels below x_lo are priced by an upper bound: carry the
    deficit δ through the pipeline and order it with the next order, which
    costs at most δ(σ·Σ_{t<=L} α^t + α^L c̄) + α^L K more.
    """
    if spec.L > MAX_AUGMENTED_L:
        raise StateSpaceTooLargeError(f"augmented oracle supports L <= {MAX_AUGMENTED_L}, got {spec.L}")
    if not 0.0 < alpha < 1.0:
        raise ProblemError(f"alpha must be in (0, 1), got {alpha}")
    base, L = spec.base, spec.L
    dmax = base.demand.max_value
    x_lo = base.x_min - L * dmax if x_lo is None else int(x_lo)
    y_max = base.x_max if y_max is None else int(y_max)
    y_top = y_max + dmax
    states, amax = _augmented_states(L, x_lo, y_top, cap)
    width = amax + 1
    lookup = np.full((y_top - x_lo + 1,) + (width,) * L, -1, dtype=np.int64)
    lookup[tuple(np.column_stack([states[:, 0] - x_lo, states[:, 1:]]).T)] = np.arange(states.shape[0])

    x, pend = states[:, 0], states[:, 1:]
    arriving = pend[:, 0]
    h = base.holding
    stage = (np.where(arriving > 0, base.K, 0.0) + base.c_unit * arriving
             + h((x + arriving)[:, None] - base.demand.values[None, :]) @ base.demand.probs)
    table = np.concatenate([[-h.left_slope], np.diff(h.table), [h.right_slope]])
    sigma = float(np.abs(table).max())
    per_unit = sigma * sum(alpha ** t for t in range(L + 1)) + alpha ** L * base.c_unit
    headroom = y_max - states.sum(axis=1)  # largest order allowed now

    n_states, m = states.shape[0], base.demand.values.size
    allowed = np.arange(amax + 1)[None, :] <= np.maximum(headroom, 0)[:, None]
    nxt_idx = np.zeros((n_states, m, amax + 1), dtype=np.int64)
    extra = np.zeros((n_states, m))
    for j, d in enumerate(base.demand.values):
        nx = x + arriving - d
        deficit = np.maximum(x_lo - nx, 0)
        extra[:, j] = np.where(deficit > 0, deficit * per_unit + alpha ** L * base.K, 0.0)
        nx = np.maximum(nx, x_lo)
        for a in range(amax + 1):
            key = [nx - x_lo] + [pend[:, i] for i in range(1, L)] + [np.full(n_states, a)]
            nxt_idx[:, j, a] = lookup[tuple(key)]
    if np.any((nxt_idx < 0) & allowed[:, None, :]):
        raise RuntimeError("augmented transition leaves the state space")
    nxt_idx = np.where(allowed[:, None, :], nxt_idx, 0)
    probs = base.demand.probs
    extra_mean = extra @ probs

    v = np.zeros(n_states)
    residual, iterations = float("inf"), 0
    threshold = tol * (1.0 - alpha) / (2.0 * alpha)
    for iterations in range(1, max_iter + 1):
        q = np.einsum("sja,j->sa", v[nxt_idx], probs)
        best = np.where(allowed, q, np.inf).min(axis=1)
        new = stage + alpha * (best + extra_mean)
        residual = float(np.abs(new - v).max())
        v = new
        if residual <= threshold:
            break
    else:
        raise ConvergenceError(f"augmented value iteration did not converge (residual {residual:.3e})",
                               residual, iterations)
    logger.info("augmented VI L=%d: %d states, %d iterations", L, n_states, iterations)
    return AugmentedSolution(float(alpha), L, states, v, iterations, residual, x_lo, y_max)


def check_reduction_identity(spec: LeadTimeSpec, alpha: float, tol: float = DEFAULT_TOL,
                             allowed: float = IDENTITY_TOL) -> CheckReport:
    """Augmented optimum minus the offset against α^L times the reduced optimum.

    Compared on pipeline states with on-hand >= x_lo + L·max demand and
    position inside the reduced grid.
    """
    reduced = reduce(spec)
    sol = value_iteration_discounted(reduced, alpha, tol)
    aug = augmented_vi(spec, alpha, tol, x_lo=reduced.x_min, y_max=reduced.x_max)
    L, dmax = spec.L, spec.base.demand.max_value
    details = {"alpha": alpha, "L": L, "s": sol.s, "S": sol.S, "x_lo": aug.x_lo, "y_max": aug.y_max}
    if sol.s - L * dmax < reduced.x_min:
        details["reason"] = "reduced s too close to the grid bottom for an exact comparison"
        return CheckReport("lead-time reduction identity", "inconclusive", details)
    worst, worst_state, compared = 0.0, None, 0
    for row, value in zip(aug.states, aug.values):
        state = PipelineState(int(row[0]), tuple(int(q) for q in row[1:]))
        if state.on_hand < aug.x_lo + L * dmax or state.position > aug.y_max:
            continue
        gap = abs(value - offset(spec, alpha, state) - alpha ** L * sol.v.at(state.position))
        compared += 1
        if gap > worst:
            worst, worst_state = gap, state
    details.update({"compared": compared, "max_gap": worst, "allowed": allowed})
    witnesses = [] if worst <= allowed else [{"on_hand": worst_state.on_hand,
                                              "pending": list(worst_state.pending), "gap": worst}]
    return CheckReport("lead-time reduction identity", status_of(not witnesses), details, witnesses)


def pipeline_path(pol_on_y: SSPolicy, spec: LeadTimeSpec, demand: np.ndarray, state0: PipelineState):
    """On-hand levels, order quantities and per-period costs; orders are charged when they arrive."""
    base, L = spec.base, spec.L
    horizon = demand.size
    post, orders = order_path(pol_on_y, demand, state0.position)
    placed = np.concatenate([np.asarray(state0.pending, dtype=np.int64), orders])  # indexed by arrival period
    arrivals = placed[:horizon]
    on_hand = state0.on_hand + np.concatenate([[0], np.cumsum(arrivals - demand)])
    cum = np.concatenate([[0], np.cumsum(placed)])
    in_transit = cum[L:L + horizon] - cum[:horizon]
    position = np.concatenate([[state0.position], post[:-1] - demand[:-1]])
    if not np.array_equal(on_hand[:horizon] + in_transit, position):
        raise RuntimeError("pipeline bookkeeping does not match the inventory position")
    cost = (np.where(arrivals > 0, base.K + base.c_unit * arrivals, 0.0)
            + base.holding(on_hand[1:]))
    return on_hand[:horizon], orders, cost


def simulate_pipeline(pol_on_y: SSPolicy, spec: LeadTimeSpec, horizon: int, seed: int = 0,
                      replications: int = 1, state0: Optional[PipelineState] = None):
    """Long-run cost of an (s,S) rule on the inventory position, simulated on the physical pipeline."""
    if horizon < spec.L:
        raise ProblemError(f"horizon must be >= L={spec.L}")
    if replications < 1:
        raise ProblemError("replications must be >= 1")
    state0 = state0 or PipelineState(pol_on_y.S, (0,) * spec.L)
    if len(state0.pending) != spec.L:
        raise ProblemError(f"pipeline must hold exactly L={spec.L} orders")
    costs, levels, orders = [], [], 0
    for child in np.random.SeedSequence(seed).spawn(replications):
        rng = np.random.default_rng(child)
        demand = draw_demand(spec.base, rng, horizon)
        on_hand, placed, cost = pipeline_path(pol_on_y, spec, demand, state0)
        orders += int(np.count_nonzero(placed))
        costs.append(cost)
        levels.append(on_hand)
    return summarize(costs, levels, orders, horizon, seed)
