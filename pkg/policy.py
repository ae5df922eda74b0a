"""Independent oracles for (s,S) policies.

Exact evaluation of a fixed policy by linear solves on the grid, exhaustive
search over (s,S) pairs, Monte-Carlo simulation, and the renewal-sum
representation of the relative value function of the zero-unit-cost model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import t as student_t

from dp_core import BellmanSolution, ValueTable
from model import ProblemError, ProblemSpec, s_star, smallest_argmin, transformed_values

logger = logging.getLogger(__name__)

# --- Configuration ---
STATIONARY_DAMPING = 0.5
STATIONARY_TOL = 1e-14
STATIONARY_MAX_ITER = 1_000_000
SOLVE_RESIDUAL_TARGET = 1e-10
CONFIDENCE = 0.95
BATCHES = 20  # batch means when a single replication is simulated
RENEWAL_TAIL = 1e-16


class ReducibleChainError(RuntimeError):
    """The policy chain on the grid is not unichain or leaves the grid."""


@dataclass(frozen=True)
class SSPolicy:
    s: int
    S: int
    order_at_s: bool = False

    def __post_init__(self):
        if self.s > self.S:
            raise ProblemError(f"policy needs s <= S, got s={self.s} S={self.S}")

    def orders(self, x):
        x = np.asarray(x)
        trigger = x <= self.s if self.order_at_s and self.s < self.S else x < self.s
        return trigger

    def action(self, x):
        x = np.asarray(x)
        return np.where(self.orders(x), self.S - x, 0)

    def to_dict(self) -> dict:
        return {"s": self.s, "S": self.S, "order_at_s": self.order_at_s}


@dataclass(frozen=True, eq=False)
class EvalResult:
    kind: str  # "discounted" | "average"
    method: str  # "linear-solve" | "stationary"
    value: Optional[ValueTable] = None
    gain: Optional[float] = None
    bias: Optional[ValueTable] = None
    stationary: Optional[np.ndarray] = None
    residual: float = 0.0

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "method": self.method, "residual": self.residual}
        if self.value is not None:
            doc["x_min"] = self.value.x_min
            doc["value"] = self.value.values.tolist()
        if self.gain is not None:
            doc["gain"] = self.gain
            doc["x_min"] = self.bias.x_min
            doc["bias"] = self.bias.values.tolist()
            doc["stationary"] = self.stationary.tolist()
        return doc


@dataclass(frozen=True)
class SimStats:
    horizon: int
    seed: int
    replications: int
    mean_cost_per_period: float
    confidence_halfwidth: float
    order_frequency: float
    mean_inventory: float
    min_inventory: int
    max_inventory: int
    replication_means: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "seed": self.seed,
            "replications": self.replications,
            "mean_cost_per_period": self.mean_cost_per_period,
            "confidence_halfwidth": self.confidence_halfwidth,
            "order_frequency": self.order_frequency,
            "mean_inventory": self.mean_inventory,
            "min_inventory": self.min_inventory,
            "max_inventory": self.max_inventory,
            "replication_means": list(self.replication_means),
        }


@dataclass(frozen=True)
class SearchResult:
    policy: SSPolicy
    value: float
    criterion: str
    reference_state: int
    evaluated: int

    def to_dict(self) -> dict:
        return {"policy": self.policy.to_dict(), "value": self.value, "criterion": self.criterion,
                "reference_state": self.reference_state, "evaluated": self.evaluated}


# --- Policy chain on the grid ---

def _check_policy(pol: SSPolicy, p: ProblemSpec) -> None:
    if pol.S > p.x_max:
        raise ProblemError(f"order-up-to level S={pol.S} is above the grid top {p.x_max}")


def _policy_chain(pol: SSPolicy, p: ProblemSpec):
    """Transition matrix, one-step cost and expected undershoot below x_min.

    Next states below the grid are lumped into x_min; the undershoot
    E[(x_min - (y - D))^+] lets callers add the exact linear correction.
    """
    _check_policy(pol, p)
    xs = p.grid
    act = pol.action(xs)
    ys = xs + act
    P = np.zeros((p.n, p.n))
    rows = np.arange(p.n)
    under = np.zeros(p.n)
    for d, q in zip(p.demand.values, p.demand.probs):
        nxt = ys - d
        np.add.at(P, (rows, np.clip(nxt - p.x_min, 0, p.n - 1)), q)
        under += q * np.maximum(p.x_min - nxt, 0)
    hold = p.holding(ys[:, None] - p.demand.values[None, :]) @ p.demand.probs
    cost = np.where(act > 0, p.K + p.c_unit * act, 0.0) + hold
    return P, cost, under


def evaluate_discounted(pol: SSPolicy, p: ProblemSpec, alpha: float) -> EvalResult:
    """Solve (I - αP)v = c for the policy chain.

    Below the grid a policy with s > x_min orders up to S, so v grows with
    slope c̄ there; otherwise the chain never orders again and v grows with
    slope σ_L/(1-α).
    """
    if not 0.0 <= alpha < 1.0:
        raise ProblemError(f"alpha must be in [0, 1), got {alpha}")
    P, cost, under = _policy_chain(pol, p)
    slope = p.c_unit if pol.s > p.x_min else p.holding.left_slope / (1.0 - alpha)
    rhs = cost + alpha * slope * under
    A = np.eye(p.n) - alpha * P
    v = np.linalg.solve(A, rhs)
    v = v + np.linalg.solve(A, rhs - A @ v)
    residual = float(np.abs(rhs + alpha * P @ v - v).max())
    if residual > SOLVE_RESIDUAL_TARGET * (1.0 + np.abs(v).max()):
        logger.warning("policy evaluation residual %.3e above target", residual)
    return EvalResult("discounted", "linear-solve", value=ValueTable(p.x_min, v, slope), residual=residual)


def closed_classes(P: np.ndarray) -> List[np.ndarray]:
    """State index sets of the closed communicating classes of P."""
    graph = csr_matrix(P > 0.0)
    count, labels = connected_components(graph, directed=True, connection="strong")
    closed = []
    for c in range(count):
        members = np.nonzero(labels == c)[0]
        outside = graph[members].indices
        if np.all(labels[outside] == c):
            closed.append(members)
    return closed


def _average_chain(pol: SSPolicy, p: ProblemSpec):
    if pol.s <= p.x_min:
        raise ReducibleChainError(
            f"policy ({pol.s}, {pol.S}) never orders before the chain leaves the grid at {p.x_min}")
    P, cost, under = _policy_chain(pol, p)
    classes = closed_classes(P)
    if len(classes) != 1:
        raise ReducibleChainError(f"policy chain has {len(classes)} closed classes")
    return P, cost + p.c_unit * under, classes[0]


def _stationary_power(P: np.ndarray, start: int) -> np.ndarray:
    pi = np.zeros(P.shape[0])
    pi[start] = 1.0
    for _ in range(STATIONARY_MAX_ITER):
        nxt = (1.0 - STATIONARY_DAMPING) * pi + STATIONARY_DAMPING * (pi @ P)
        if np.abs(nxt - pi).sum() <= STATIONARY_TOL:
            return nxt
        pi = nxt
    logger.warning("stationary power iteration hit %d iterations", STATIONARY_MAX_ITER)
    return pi


def _stationary_direct(P: np.ndarray) -> np.ndarray:
    A = np.eye(P.shape[0]) - P.T
    A[-1, :] = 1.0
    b = np.zeros(P.shape[0])
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def _bias(P: np.ndarray, cost: np.ndarray, pi: np.ndarray, w: float) -> np.ndarray:
    n = P.shape[0]
    return np.linalg.solve(np.eye(n) - P + np.outer(np.ones(n), pi), cost - w)


def evaluate_average(pol: SSPolicy, p: ProblemSpec) -> EvalResult:
    P, cost, recurrent = _average_chain(pol, p)
    pi = _stationary_power(P, int(recurrent[0]))
    pi = pi / pi.sum()
    w = float(pi @ cost)
    h = _bias(P, cost, pi, w)
    residual = float(np.abs(cost - w + P @ h - h).max())
    return EvalResult("average", "stationary", gain=w, bias=ValueTable(p.x_min, h, p.c_unit),
                      stationary=pi, residual=residual)


# --- Exhaustive search ---

def exhaustive_sS_search(p: ProblemSpec, criterion: str = "average", alpha: Optional[float] = None,
                         s_range=None, S_range=None) -> SearchResult:
    """Best (s,S) pair by brute force.

    Discounted pairs are ranked by their value at the grid midpoint, average
    pairs by gain.  The default window is x_min < s <= S*, s <= S <= S* + max demand.
    """
    if criterion == "discounted":
        if alpha is None:
            raise ProblemError("discounted search needs alpha")
        level = alpha
    elif criterion == "average":
        level = 1.0
    else:
        raise ProblemError(f"criterion must be 'discounted' or 'average', got {criterion!r}")
    f = transformed_values(p, level)
    S_star = s_star(p, level, f, smallest_argmin(f))
    s_lo, s_hi = s_range if s_range is not None else (p.x_min + 1, min(S_star, p.x_max))
    S_top = S_range[1] if S_range is not None else min(S_star + p.demand.max_value, p.x_max)
    ref = p.midpoint
    best, best_value, evaluated = None, np.inf, 0
    for s in range(s_lo, s_hi + 1):
        S_lo = max(s, S_range[0]) if S_range is not None else s
        for S in range(S_lo, S_top + 1):
            pol = SSPolicy(s, S)
            if criterion == "discounted":
                value = evaluate_discounted(pol, p, alpha).value.at(ref)
            else:
                P, cost, _ = _average_chain(pol, p)
                value = float(_stationary_direct(P) @ cost)
            evaluated += 1
            if best is None or value < best_value - 1e-12 * (1.0 + abs(best_value)):
                best, best_value = pol, value
    if best is None:
        raise ProblemError("empty (s,S) search window")
    logger.info("exhaustive %s search: %d pairs, best (%d, %d) value %.10g",
                criterion, evaluated, best.s, best.S, best_value)
    return SearchResult(best, float(best_value), criterion, ref, evaluated)


# --- Simulation ---

def order_path(pol: SSPolicy, demand: np.ndarray, y0: int):
    """Post-order levels and order quantities along one demand path.

    Between orders the level only falls, so the next order time is found by a
    binary search on cumulative demand instead of a per-period loop.
    """
    horizon = demand.size
    cs = np.concatenate([[0], np.cumsum(demand)])
    post = np.empty(horizon, dtype=np.int64)
    orders = np.zeros(horizon, dtype=np.int64)
    start = 0
    if pol.orders(y0):
        level = pol.S
        orders[0] = pol.S - y0
    else:
        level = y0
    side = "left" if pol.order_at_s and pol.s < pol.S else "right"
    while start < horizon:
        nxt = int(np.searchsorted(cs, cs[start] + level - pol.s, side=side))
        nxt = min(max(nxt, start + 1), horizon)
        post[start:nxt] = level - (cs[start:nxt] - cs[start])
        if nxt < horizon:
            orders[nxt] = pol.S - (level - (cs[nxt] - cs[start]))
        start, level = nxt, pol.S
    return post, orders


def simulate_path(pol: SSPolicy, p: ProblemSpec, demand: np.ndarray, x0: int):
    """Post-order levels, order quantities and per-period costs along one demand path."""
    post, orders = order_path(pol, demand, x0)
    cost = np.where(orders > 0, p.K + p.c_unit * orders, 0.0) + p.holding(post - demand)
    return post, orders, cost


def _halfwidth(samples: np.ndarray) -> float:
    if samples.size < 2:
        return 0.0
    q = student_t.ppf(0.5 + CONFIDENCE / 2.0, samples.size - 1)
    return float(q * samples.std(ddof=1) / np.sqrt(samples.size))


def draw_demand(p: ProblemSpec, rng: np.random.Generator, horizon: int) -> np.ndarray:
    return rng.choice(p.demand.values, size=horizon, p=p.demand.probs)


def summarize(costs: List[np.ndarray], levels: List[np.ndarray], orders: int, horizon: int,
              seed: int) -> SimStats:
    means = np.array([c.mean() for c in costs])
    if means.size >= 2:
        half = _halfwidth(means)
    else:
        batches = min(BATCHES, horizon)
        half = _halfwidth(np.array([b.mean() for b in np.array_split(costs[0], batches)]))
    stacked = np.concatenate(levels)
    return SimStats(
        horizon=horizon,
        seed=seed,
        replications=len(costs),
        mean_cost_per_period=float(means.mean()),
        confidence_halfwidth=half,
        order_frequency=orders / float(horizon * len(costs)),
        mean_inventory=float(stacked.mean()),
        min_inventory=int(stacked.min()),
        max_inventory=int(stacked.max()),
        replication_means=means.tolist(),
    )


def simulate(pol: SSPolicy, p: ProblemSpec, horizon: int, replications: int = 1, seed: int = 0,
             x0: Optional[int] = None) -> SimStats:
    """Mean cost per period over seeded demand paths, one child stream per replication."""
    if horizon < 1:
        raise ProblemError(f"horizon must be >= 1, got {horizon}")
    if replications < 1:
        raise ProblemError(f"replications must be >= 1, got {replications}")
    x0 = pol.S if x0 is None else int(x0)
    costs, levels, orders = [], [], 0
    for child in np.random.SeedSequence(seed).spawn(replications):
        rng = np.random.default_rng(child)
        demand = draw_demand(p, rng, horizon)
        y, placed, cost = simulate_path(pol, p, demand, x0)
        orders += int(np.count_nonzero(placed))
        costs.append(cost)
        levels.append(y)
    stats = summarize(costs, levels, orders, horizon, seed)
    logger.debug("simulated (%d, %d): mean %.6f ± %.6f", pol.s, pol.S,
                 stats.mean_cost_per_period, stats.confidence_halfwidth)
    return stats


# --- Renewal representation ---

def renewal_u_bar(p: ProblemSpec, alpha: float, sol: BellmanSolution, x: int) -> float:
    """ū_α(x) from the renewal sum over demand partial sums S_j.

    Period j is charged E[h_α(x - S_j - D)] while S_j <= x - s_α; the first
    period with S_j > x - s_α pays K.  Returns K below s_α.
    """
    if not 0.0 < alpha < 1.0:
        raise ProblemError(f"alpha must be in (0, 1), got {alpha}")
    x = int(x)
    if x < sol.s:
        return float(p.K)
    if sol.kind == "transformed":
        m_bar = sol.m_alpha
    else:
        m_bar = float((sol.v.values + p.c_unit * sol.v.grid).min())
    t = x - sol.s
    h_tilde = transformed_values(p, alpha, x - np.arange(t + 1)) - (1.0 - alpha) * m_bar
    pmf = p.demand.dense()
    dist = np.zeros(t + 1)
    dist[0] = 1.0
    mass = 1.0
    total, disc, j = 0.0, 1.0, 0
    scale = float(np.abs(h_tilde).max()) + p.K
    while mass > 0.0 and disc * mass * scale > RENEWAL_TAIL:
        total += disc * float(dist @ h_tilde)
        dist = np.convolve(dist, pmf)[: t + 1]
        new_mass = float(dist.sum())
        total += p.K * disc * alpha * (mass - new_mass)
        mass, disc, j = new_mass, disc * alpha, j + 1
    logger.debug("renewal sum at x=%d used %d partial sums", x, j)
    return total
