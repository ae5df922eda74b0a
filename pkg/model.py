"""Problem instances for the periodic-review setup-cost inventory model.

A ProblemSpec bundles the fixed ordering cost K, the unit ordering cost, a
finite integer demand distribution and a tabulated holding/backlog cost with
linear tails.  This module also builds the α-transformed expected cost
E[h_α(x-D)] and checks the standing quasiconvexity assumptions on the grid.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# --- Configuration ---
PROB_TOL = 1e-12  # absolute tolerance on probabilities
COST_RTOL = 1e-9  # relative tolerance on cost comparisons
STAR_SEARCH_LIMIT = 100_000  # grid units scanned past x_max when looking for S*_alpha


class ProblemError(ValueError):
    """Invalid problem instance or parameter."""


class NonConvexHoldingError(ProblemError):
    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


def cost_tol(scale: float) -> float:
    return COST_RTOL * (1.0 + abs(float(scale)))


# --- Demand ---

@dataclass(frozen=True, eq=False)
class DemandPMF:
    """Finite nonnegative integer demand distribution."""

    values: np.ndarray
    probs: np.ndarray
    mean: float = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        probs = np.asarray(self.probs, dtype=float)
        if values.ndim != 1 or values.shape != probs.shape or values.size == 0:
            raise ProblemError("demand must be a non-empty list of [value, prob] atoms")
        for k, (v, q) in enumerate(zip(values.tolist(), probs.tolist())):
            if float(v) != int(v) or v < 0:
                raise ProblemError(f"demand atom {k} has value {v}; values must be nonnegative integers")
            if not np.isfinite(q) or q < 0.0 or q > 1.0:
                raise ProblemError(f"demand atom {k} (value {int(v)}) has probability {q} outside [0, 1]")
        values = values.astype(np.int64)
        if np.unique(values).size != values.size:
            raise ProblemError("demand atom values must be distinct")
        total = probs.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise ProblemError(f"demand probabilities sum to {total!r}, not 1")
        keep = probs > 0.0
        values, probs = values[keep], probs[keep]
        if not np.any(values > 0):
            raise ProblemError("demand must satisfy P(D > 0) > 0")
        order = np.argsort(values)
        values, probs = values[order], probs[order]
        values.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "mean", float(values @ probs))

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence[float]]) -> "DemandPMF":
        atoms = [tuple(a) for a in atoms]
        for k, a in enumerate(atoms):
            if len(a) != 2:
                raise ProblemError(f"demand atom {k} must be a [value, prob] pair")
        return cls(np.array([a[0] for a in atoms]), np.array([a[1] for a in atoms], dtype=float))

    @classmethod
    def from_dense(cls, pmf: Sequence[float]) -> "DemandPMF":
        """Distribution whose probability of value k is pmf[k]."""
        pmf = np.asarray(pmf, dtype=float)
        return cls(np.arange(pmf.size), pmf)

    @property
    def max_value(self) -> int:
        return int(self.values[-1])

    @property
    def p_zero(self) -> float:
        return float(self.probs[0]) if self.values[0] == 0 else 0.0

    def dense(self) -> np.ndarray:
        """Probabilities indexed by value 0..max_value."""
        out = np.zeros(self.max_value + 1)
        out[self.values] = self.probs
        return out

    def atoms(self) -> list:
        return [[int(v), float(q)] for v, q in zip(self.values, self.probs)]


# --- Holding / backlog cost ---

@dataclass(frozen=True, eq=False)
class HoldingCost:
    """Tabulated h on [x_min, x_max], extended linearly outside the table."""

    x_min: int
    x_max: int
    table: np.ndarray
    left_slope: float
    right_slope: float

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        if int(self.x_max) < int(self.x_min):
            raise ProblemError("holding: x_max must be >= x_min")
        if table.shape != (int(self.x_max) - int(self.x_min) + 1,):
            raise ProblemError(
                f"holding: table has {table.size} entries, expected {int(self.x_max) - int(self.x_min) + 1}"
            )
        if not np.all(np.isfinite(table)):
            raise ProblemError("holding: table values must be finite")
        if np.any(table < 0.0):
            k = int(np.argmax(table < 0.0))
            raise ProblemError(f"holding: table[{k}] = {table[k]} is negative")
        if not (self.left_slope > 0.0 and self.right_slope > 0.0):
            raise ProblemError("holding: left_slope and right_slope must be positive")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "x_min", int(self.x_min))
        object.__setattr__(self, "x_max", int(self.x_max))
        object.__setattr__(self, "left_slope", float(self.left_slope))
        object.__setattr__(self, "right_slope", float(self.right_slope))

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], x_min: int, x_max: int,
                      left_slope: float, right_slope: float) -> "HoldingCost":
        xs = np.arange(x_min, x_max + 1)
        return cls(x_min, x_max, np.asarray(func(xs), dtype=float), left_slope, right_slope)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x)
        idx = np.clip(x - self.x_min, 0, self.table.size - 1)
        out = self.table[idx]
        out = np.where(x < self.x_min, self.table[0] + self.left_slope * (self.x_min - x), out)
        out = np.where(x > self.x_max, self.table[-1] + self.right_slope * (x - self.x_max), out)
        return out


# --- Problem instance ---

@dataclass(frozen=True, eq=False)
class ProblemSpec:
    K: float
    c_unit: float
    demand: DemandPMF
    holding: HoldingCost
    x_min: int
    x_max: int

    def __post_init__(self):
        if not self.K > 0.0:
            raise ProblemError(f"K must be positive, got {self.K}")
        if not self.c_unit > 0.0:
            raise ProblemError(f"c_unit must be positive, got {self.c_unit}")
        if int(self.x_min) >= int(self.x_max):
            raise ProblemError("grid: x_min must be < x_max")
        if int(self.x_max) - int(self.x_min) <= 2 * self.demand.max_value:
            raise ProblemError(
                f"grid [{self.x_min}, {self.x_max}] is too narrow for max demand {self.demand.max_value}"
            )
        object.__setattr__(self, "K", float(self.K))
        object.__setattr__(self, "c_unit", float(self.c_unit))
        object.__setattr__(self, "x_min", int(self.x_min))
        object.__setattr__(self, "x_max", int(self.x_max))

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    @property
    def n(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def midpoint(self) -> int:
        return (self.x_min + self.x_max) // 2

    def index(self, x: int) -> int:
        if not self.x_min <= x <= self.x_max:
            raise ProblemError(f"state {x} is outside the grid [{self.x_min}, {self.x_max}]")
        return int(x) - self.x_min

    def with_grid(self, x_min: int, x_max: int) -> "ProblemSpec":
        return ProblemSpec(self.K, self.c_unit, self.demand, self.holding, x_min, x_max)


def make_problem(K: float, c_unit: float, demand_atoms, h_func, x_min: int, x_max: int,
                 left_slope: float, right_slope: float) -> ProblemSpec:
    """Build an instance whose holding table is h_func tabulated on the grid."""
    holding = HoldingCost.from_function(h_func, x_min, x_max, left_slope, right_slope)
    return ProblemSpec(K, c_unit, DemandPMF.from_atoms(demand_atoms), holding, x_min, x_max)


# --- Expected costs ---

def expected_shifted_cost(h: HoldingCost, d: DemandPMF, x: int) -> float:
    """E[h(x - D)] at a single point."""
    return float(h(int(x) - d.values) @ d.probs)


def expected_cost_table(h: HoldingCost, d: DemandPMF, xs) -> np.ndarray:
    xs = np.asarray(xs)
    return h(xs[:, None] - d.values[None, :]) @ d.probs


@dataclass(frozen=True, eq=False)
class TransformedCostView:
    """E[h_α(x-D)] tabulated on the grid."""

    alpha: float
    x_min: int
    values: np.ndarray

    def at(self, x: int) -> float:
        return float(self.values[int(x) - self.x_min])


def transformed_values(p: ProblemSpec, alpha: float, xs=None) -> np.ndarray:
    """E[h(x-D)] + (1-α)c̄x + αc̄E[D]; accepts α = 0 for single-stage use."""
    xs = p.grid if xs is None else np.asarray(xs)
    return (expected_cost_table(p.holding, p.demand, xs)
            + (1.0 - alpha) * p.c_unit * xs + alpha * p.c_unit * p.demand.mean)


def transformed_expected_cost(p: ProblemSpec, alpha: float) -> TransformedCostView:
    if not 0.0 < alpha <= 1.0:
        raise ProblemError(f"alpha must be in (0, 1], got {alpha}")
    return TransformedCostView(float(alpha), p.x_min, transformed_values(p, alpha))


# --- Grid shape checks ---

def smallest_argmin(values) -> int:
    """Index of the leftmost minimizer, ties within COST_RTOL."""
    values = np.asarray(values, dtype=float)
    low = values.min()
    return int(np.argmax(values <= low + cost_tol(low)))


def quasiconvex_witness(values) -> Optional[Tuple[int, int, int]]:
    """Indices (i, j, k), i < j < k, with f(j) > max(f(i), f(k)); None if quasiconvex."""
    f = np.asarray(values, dtype=float)
    if f.size < 3:
        return None
    prefix_arg = np.zeros(f.size, dtype=int)
    for j in range(1, f.size):
        prev = prefix_arg[j - 1]
        prefix_arg[j] = j if f[j] < f[prev] else prev
    suffix_arg = np.full(f.size, f.size - 1, dtype=int)
    for j in range(f.size - 2, -1, -1):
        nxt = suffix_arg[j + 1]
        suffix_arg[j] = j if f[j] <= f[nxt] else nxt
    for j in range(1, f.size - 1):
        i, k = prefix_arg[j - 1], suffix_arg[j + 1]
        if f[j] > max(f[i], f[k]) + cost_tol(f[j]):
            return int(i), int(j), int(k)
    return None


@dataclass(frozen=True)
class AssumptionReport:
    alpha: float
    quasiconvex: bool
    witness: Optional[Tuple[int, int, int]]
    left_limit_ok: bool
    left_limit: float
    strictly_decreasing_left_of_r: bool
    r_alpha: int
    S_star_alpha: int
    alpha_star_bound: float

    @property
    def passed(self) -> bool:
        return self.quasiconvex and self.left_limit_ok

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "passed": self.passed,
            "quasiconvex": self.quasiconvex,
            "witness": list(self.witness) if self.witness else None,
            "left_limit_ok": self.left_limit_ok,
            "left_limit": self.left_limit if np.isfinite(self.left_limit) else str(self.left_limit),
            "strictly_decreasing_left_of_r": self.strictly_decreasing_left_of_r,
            "r_alpha": self.r_alpha,
            "S_star_alpha": self.S_star_alpha,
            "alpha_star_bound": self.alpha_star_bound,
        }


def _left_limit(p: ProblemSpec, alpha: float) -> float:
    """lim_{x→-∞} E[h_α(x-D)] from the linear left tail."""
    slope = p.holding.left_slope - (1.0 - alpha) * p.c_unit
    if slope > 0.0:
        return float("inf")
    if slope < 0.0:
        return float("-inf")
    return float(p.holding.table[0] + p.holding.left_slope * (p.holding.x_min + p.demand.mean)
                 + alpha * p.c_unit * p.demand.mean)


def s_star(p: ProblemSpec, alpha: float, values: np.ndarray, r_index: int) -> int:
    """S*_α = inf{x > r_α : E[h_α(x-D)] >= K + E[h_α(r_α-D)]}, scanning past x_max if needed."""
    level = p.K + values[r_index]
    tail = values[r_index + 1:]
    hit = np.nonzero(tail >= level - cost_tol(level))[0]
    if hit.size:
        return p.x_min + r_index + 1 + int(hit[0])
    for x in range(p.x_max + 1, p.x_max + STAR_SEARCH_LIMIT):
        if transformed_values(p, alpha, [x])[0] >= level - cost_tol(level):
            return x
    raise ProblemError("E[h_alpha(x-D)] never reaches K above its minimum; check the right tail")


def check_assumptions(p: ProblemSpec, alpha: float) -> AssumptionReport:
    view = transformed_expected_cost(p, alpha)
    f = view.values
    witness = quasiconvex_witness(f)
    r_index = smallest_argmin(f)
    limit = _left_limit(p, alpha)
    left_ok = bool(limit > p.K + f.min())
    head = f[: r_index + 1]
    strictly = bool(np.all(np.diff(head) < 0.0))
    report = AssumptionReport(
        alpha=float(alpha),
        quasiconvex=witness is None,
        witness=None if witness is None else tuple(p.x_min + i for i in witness),
        left_limit_ok=left_ok,
        left_limit=limit,
        strictly_decreasing_left_of_r=strictly,
        r_alpha=p.x_min + r_index,
        S_star_alpha=s_star(p, alpha, f, r_index),
        alpha_star_bound=max(1.0 - p.holding.left_slope / p.c_unit, 0.0),
    )
    if not report.passed:
        logger.info("assumption check failed at alpha=%s: quasiconvex=%s left_limit_ok=%s",
                    alpha, report.quasiconvex, report.left_limit_ok)
    return report


def convexity_violation(h: HoldingCost) -> Optional[int]:
    """Table index where h fails to be convex (tails included), or None."""
    t = h.table
    steps = np.concatenate([[-h.left_slope], np.diff(t), [h.right_slope]])
    bad = np.nonzero(np.diff(steps) < -cost_tol(np.abs(t).max()))[0]
    return None if bad.size == 0 else int(bad[0])


def alpha_star_for_convex(p: ProblemSpec) -> float:
    k = convexity_violation(p.holding)
    if k is not None:
        raise NonConvexHoldingError(k, f"holding cost is not convex at table index {k} (x = {p.holding.x_min + k})")
    return max(1.0 - p.holding.left_slope / p.c_unit, 0.0)


def rescale_problem(p: ProblemSpec, factor: int) -> ProblemSpec:
    """Refine the grid so one unit is 1/factor of a stock unit."""
    factor = int(factor)
    if factor < 1:
        raise ProblemError("rescale factor must be a positive integer")
    h = p.holding
    fine_x = np.arange(h.x_min * factor, h.x_max * factor + 1)
    table = np.interp(fine_x / factor, np.arange(h.x_min, h.x_max + 1), h.table)
    holding = HoldingCost(int(fine_x[0]), int(fine_x[-1]), table,
                          h.left_slope / factor, h.right_slope / factor)
    demand = DemandPMF(p.demand.values * factor, p.demand.probs)
    return ProblemSpec(p.K, p.c_unit / factor, demand, holding, p.x_min * factor, p.x_max * factor)


# --- JSON round trip ---

def _field(doc: dict, name: str, where: str = "problem"):
    if name not in doc:
        raise ProblemError(f"{where}: missing field '{name}'")
    return doc[name]


def problem_from_dict(doc: dict) -> ProblemSpec:
    if not isinstance(doc, dict):
        raise ProblemError("problem document must be a JSON object")
    hdoc = _field(doc, "holding")
    try:
        holding = HoldingCost(
            int(_field(hdoc, "x_min", "holding")),
            int(_field(hdoc, "x_max", "holding")),
            np.asarray(_field(hdoc, "table", "holding"), dtype=float),
            float(_field(hdoc, "left_slope", "holding")),
            float(_field(hdoc, "right_slope", "holding")),
        )
        demand = DemandPMF.from_atoms(_field(doc, "demand"))
        grid = doc.get("grid", [holding.x_min, holding.x_max])
        return ProblemSpec(float(_field(doc, "K")), float(_field(doc, "c_unit")), demand, holding,
                           int(grid[0]), int(grid[1]))
    except (TypeError, ValueError) as e:
        if isinstance(e, ProblemError):
            raise
        raise ProblemError(f"malformed problem field: {e}") from e


def problem_to_dict(p: ProblemSpec) -> dict:
    return {
        "K": p.K,
        "c_unit": p.c_unit,
        "demand": p.demand.atoms(),
        "holding": {
            "x_min": p.holding.x_min,
            "x_max": p.holding.x_max,
            "table": p.holding.table.tolist(),
            "left_slope": p.holding.left_slope,
            "right_slope": p.holding.right_slope,
        },
        "grid": [p.x_min, p.x_max],
    }


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ProblemError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e


def load_problem(path) -> ProblemSpec:
    return problem_from_dict(read_json(path))


def dump_problem(p: ProblemSpec, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(p), indent=2), encoding="utf-8")
