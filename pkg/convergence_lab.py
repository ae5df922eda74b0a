"""Discount-factor sweeps and numerical checks of the vanishing-discount limits.

A sweep solves the standard and the zero-unit-cost model at each α of a
schedule (in worker threads, one solve pair per α) and keeps the per-α
diagnostics in SweepRecords.  The check_* functions compare the sweep with the
average-cost solution from relative value iteration and return CheckReports.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dp_core import (
    AverageSolution,
    BellmanSolution,
    ConvergenceError,
    GTable,
    ValueTable,
    bellman_from_G,
    build_G,
    extract_thresholds,
    interior_window,
    value_iteration_discounted,
    transformed_model_vi,
)
from model import ProblemError, ProblemSpec, check_assumptions, transformed_values
from policy import SSPolicy, evaluate_average
from reports import INCONCLUSIVE, CheckReport, combine, status_of

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_SCHEDULE = [1.0 - 2.0 ** -k for k in range(1, 13)]
SWEEP_TOL = 1e-6
GCAL_RTOL = 1e-7
GAIN_RTOL = 1e-2  # terminal gap allowance, relative to 1 + w
POLICY_GAIN_RTOL = 1e-4
U_RTOL = 1e-2
LEMMA_TOL = 1e-8
EQUICONTINUITY_GROWTH = 1.1
STABLE_TAIL = 4  # sweep points over which s_alpha must be constant
MIN_RECORDS = 3


@dataclass(frozen=True, eq=False)
class SweepRecord:
    alpha: float
    s_alpha: int
    S_alpha: int
    r_alpha: int
    S_star_alpha: int
    m_alpha: float
    m_bar_alpha: float
    scaled_gain: float
    scaled_gain_bar: float
    h_alpha_at_s: float
    h_alpha_below_s: float  # E[h_α(s_α - 1 - D)]
    u_alpha: ValueTable
    solution: BellmanSolution
    transformed: BellmanSolution
    tol: float
    converged: bool = True

    def row(self) -> list:
        return [self.alpha, self.s_alpha, self.S_alpha, self.r_alpha, self.S_star_alpha, self.m_alpha,
                self.m_bar_alpha, self.scaled_gain, self.scaled_gain_bar, self.h_alpha_at_s]

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "s_alpha": self.s_alpha,
            "S_alpha": self.S_alpha,
            "r_alpha": self.r_alpha,
            "S_star_alpha": self.S_star_alpha,
            "m_alpha": self.m_alpha,
            "m_bar_alpha": self.m_bar_alpha,
            "scaled_gain": self.scaled_gain,
            "scaled_gain_bar": self.scaled_gain_bar,
            "h_alpha_at_s": self.h_alpha_at_s,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class GcalSet:
    alpha: object  # float, or "average" for the H-table
    members: Tuple[int, ...]
    s: int
    S: int
    tolerance: float

    @property
    def empty(self) -> bool:
        return not self.members

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "members": list(self.members), "s": self.s, "S": self.S,
                "tolerance": self.tolerance, "empty": self.empty}


@dataclass(frozen=True)
class AcoeReport:
    residual: float
    corollary_gap: float
    s: int
    S: int
    consistent: bool
    worst_x: int

    def to_dict(self) -> dict:
        return {"residual": self.residual, "corollary_gap": self.corollary_gap, "s": self.s,
                "S": self.S, "consistent": self.consistent, "worst_x": self.worst_x}


# --- Sweep ---

def make_record(p: ProblemSpec, alpha: float, tol: float = SWEEP_TOL, max_iter: Optional[int] = None) -> SweepRecord:
    kwargs = {} if max_iter is None else {"max_iter": max_iter}
    converged = True
    try:
        sol = value_iteration_discounted(p, alpha, tol, **kwargs)
    except ConvergenceError as e:
        logger.warning("alpha=%s: %s", alpha, e)
        sol, converged = e.solution, False
    try:
        bar = transformed_model_vi(p, alpha, tol, **kwargs)
    except ConvergenceError as e:
        logger.warning("alpha=%s: %s", alpha, e)
        bar, converged = e.solution, False
    report = check_assumptions(p, alpha)
    at_s, below_s = transformed_values(p, alpha, [sol.s, sol.s - 1])
    return SweepRecord(
        alpha=float(alpha),
        s_alpha=sol.s,
        S_alpha=sol.S,
        r_alpha=report.r_alpha,
        S_star_alpha=report.S_star_alpha,
        m_alpha=sol.m_alpha,
        m_bar_alpha=bar.m_alpha,
        scaled_gain=(1.0 - alpha) * sol.m_alpha,
        scaled_gain_bar=(1.0 - alpha) * bar.m_alpha,
        h_alpha_at_s=float(at_s),
        h_alpha_below_s=float(below_s),
        u_alpha=sol.v.shifted(-sol.m_alpha),
        solution=sol,
        transformed=bar,
        tol=tol,
        converged=converged,
    )


def validate_schedule(schedule: Sequence[float]) -> List[float]:
    schedule = [float(a) for a in schedule]
    for a in schedule:
        if not 0.0 < a < 1.0:
            raise ProblemError(f"schedule value {a} is outside (0, 1)")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ProblemError("schedule must be strictly increasing")
    return schedule


def _sweep_worker(p, tasks: queue.Queue, results: queue.Queue, tol, max_iter):
    while True:
        item = tasks.get()
        if item is None:
            tasks.task_done()
            return
        alpha = item
        try:
            results.put((alpha, make_record(p, alpha, tol, max_iter), None))
        except Exception as e:  # reported to the caller after the join
            results.put((alpha, None, e))
        finally:
            tasks.task_done()


def run_sweep(p: ProblemSpec, schedule: Sequence[float] = DEFAULT_SCHEDULE, tol: float = SWEEP_TOL,
              jobs: int = 1, max_iter: Optional[int] = None) -> List[SweepRecord]:
    """One SweepRecord per α, sorted by α whatever the worker scheduling."""
    schedule = validate_schedule(schedule)
    if not schedule:
        return []
    floor = check_assumptions(p, schedule[0]).alpha_star_bound
    if schedule[0] <= floor:
        logger.warning("schedule starts at %s, not above alpha* bound %s", schedule[0], floor)
    tasks: queue.Queue = queue.Queue()
    results: queue.Queue = queue.Queue()
    workers = [threading.Thread(target=_sweep_worker, args=(p, tasks, results, tol, max_iter), daemon=True)
               for _ in range(max(1, min(jobs, len(schedule))))]
    for w in workers:
        w.start()
    for alpha in schedule:
        tasks.put(alpha)
    for _ in workers:
        tasks.put(None)
    tasks.join()
    collected = []
    while not results.empty():
        alpha, record, error = results.get()
        if error is not None:
            raise error
        collected.append(record)
    collected.sort(key=lambda r: r.alpha)
    logger.info("sweep finished: %d discount factors", len(collected))
    return collected


# --- Checks ---

def _window(p: ProblemSpec, window) -> Tuple[int, int]:
    return interior_window(p) if window is None else (int(window[0]), int(window[1]))


def check_threshold_convergence(records: Sequence[SweepRecord], avg: AverageSolution, p: ProblemSpec,
                                window=None) -> CheckReport:
    name = "threshold convergence"
    if not records:
        return CheckReport(name, INCONCLUSIVE, {"reason": "no sweep records"})
    lo, hi = _window(p, window)
    last = records[-1]
    r_1 = check_assumptions(p, 1.0).r_alpha
    w_pol = evaluate_average(SSPolicy(last.s_alpha, last.S_alpha), p).gain
    tail = [r.s_alpha for r in records[-STABLE_TAIL:]]
    outside = [r.alpha for r in records
               if not (lo <= r.s_alpha <= hi and lo <= r.S_alpha <= hi)]
    details = {
        "s_last": last.s_alpha,
        "S_last": last.S_alpha,
        "avg_s": avg.s,
        "avg_S": avg.S,
        "r_1": r_1,
        "policy_gain": w_pol,
        "avg_w": avg.w,
        "gain_gap": abs(w_pol - avg.w),
        "s_tail": tail,
        "window": [lo, hi],
    }
    witnesses = []
    if abs(last.s_alpha - avg.s) > 1:
        witnesses.append({"alpha": last.alpha, "issue": "s far from average-cost s"})
    if last.s_alpha > r_1:
        witnesses.append({"alpha": last.alpha, "issue": "s above r_1"})
    if abs(w_pol - avg.w) > POLICY_GAIN_RTOL * (1.0 + abs(avg.w)):
        witnesses.append({"alpha": last.alpha, "issue": "policy gain differs from w"})
    if len(records) >= STABLE_TAIL and len(set(tail)) != 1:
        witnesses.append({"alphas": [r.alpha for r in records[-STABLE_TAIL:]], "issue": "s not constant"})
    for a in outside:
        witnesses.append({"alpha": a, "issue": "threshold outside interior window"})
    return CheckReport(name, status_of(not witnesses), details, witnesses)


def _gaps(values: Sequence[float], w: float) -> np.ndarray:
    return np.abs(np.asarray(values, dtype=float) - w)


def check_gain_limits(records: Sequence[SweepRecord], avg: AverageSolution) -> CheckReport:
    name = "gain limits"
    if len(records) < MIN_RECORDS:
        return CheckReport(name, INCONCLUSIVE, {"reason": f"needs >= {MIN_RECORDS} records",
                                                "records": len(records)})
    w = avg.w
    limit = GAIN_RTOL * (1.0 + abs(w))
    width = abs(records[-1].h_alpha_below_s - records[-1].h_alpha_at_s)
    sequences = {
        "scaled_gain": ([r.scaled_gain for r in records], limit, True),
        "scaled_gain_bar": ([r.scaled_gain_bar for r in records], limit, True),
        "h_alpha_at_s": ([r.h_alpha_at_s for r in records], limit + width, False),
    }
    details, witnesses = {"w": w, "one_step_width": width}, []
    for key, (values, allowed, monotone) in sequences.items():
        gaps = _gaps(values, w)
        tail = gaps[-MIN_RECORDS:]
        decreasing = bool(np.all(np.diff(tail) <= 1e-12 * (1.0 + abs(w))))
        details[key] = {"terminal_gap": float(gaps[-1]), "allowed": allowed, "last_gaps": tail.tolist(),
                        "decreasing": decreasing}
        if gaps[-1] > allowed:
            witnesses.append({"sequence": key, "issue": "terminal gap too large", "gap": float(gaps[-1])})
        if monotone and not decreasing:
            witnesses.append({"sequence": key, "issue": "gaps not decreasing", "gaps": tail.tolist()})
    details["max_terminal_gap"] = max(d["terminal_gap"] for k, d in details.items() if isinstance(d, dict))
    return CheckReport(name, status_of(not witnesses), details, witnesses)


def check_lemma_value_identity(record: SweepRecord, K: float) -> CheckReport:
    """E[h_α(s-D)] <= (1-α)(m̄+K) <= E[h_α(s-1-D)], each side widened by G(s-1) - G(s)."""
    alpha = record.alpha
    level = (1.0 - alpha) * (record.m_bar_alpha + K)
    g = record.solution.g
    s = record.s_alpha
    eps_grid = abs(g.at(s - 1) - g.at(s)) if s - 1 >= g.x_min else 0.0
    slack = 2.0 * record.tol + 1e-9 * (1.0 + abs(level))
    lower_gap = record.h_alpha_at_s - level
    upper_gap = level - record.h_alpha_below_s
    details = {
        "alpha": alpha,
        "level": level,
        "h_at_s": record.h_alpha_at_s,
        "h_below_s": record.h_alpha_below_s,
        "eps_grid": eps_grid,
        "width": record.h_alpha_below_s - record.h_alpha_at_s,
        "lower_gap": lower_gap,
        "upper_gap": upper_gap,
    }
    witnesses = []
    if lower_gap > eps_grid + slack:
        witnesses.append({"alpha": alpha, "side": "lower", "gap": lower_gap})
    if upper_gap > eps_grid + slack:
        witnesses.append({"alpha": alpha, "side": "upper", "gap": upper_gap})
    return CheckReport("value identity bracket", status_of(not witnesses), details, witnesses)


def compute_gcal(g: GTable, K: float, tol: Optional[float] = None) -> GcalSet:
    """Grid points x <= S with G(y) = K + G(S) for every y in [s, x], up to tol."""
    s, S = extract_thresholds(g, K)
    level = K + g.at(S)
    if tol is None:
        tol = GCAL_RTOL * (1.0 + abs(level))
    members = []
    for x in range(s, S + 1):
        if abs(g.at(x) - level) > tol:
            break
        members.append(x)
    alpha = "average" if g.alpha == 1.0 else g.alpha
    return GcalSet(alpha, tuple(members), s, S, tol)


def check_u_convergence(records: Sequence[SweepRecord], avg: AverageSolution, p: ProblemSpec,
                        window=None) -> CheckReport:
    name = "relative value convergence"
    if len(records) < MIN_RECORDS:
        return CheckReport(name, INCONCLUSIVE, {"reason": f"needs >= {MIN_RECORDS} records",
                                                "records": len(records)})
    lo, hi = _window(p, window)
    xs = np.arange(lo, hi + 1)
    target = avg.u.at(xs)
    sups, worst = [], []
    for r in records[-MIN_RECORDS:]:
        gap = np.abs(r.u_alpha.at(xs) - target)
        sups.append(float(gap.max()))
        worst.append(int(xs[int(np.argmax(gap))]))
    limit = U_RTOL * (1.0 + float(target.max()))
    decreasing = bool(np.all(np.diff(sups) < 0.0))
    # below s, u(x) = u(s-1) + c̄(s-1-x); the step from s-1 to s exceeds c̄ by K + H(S) - H(s)
    below = xs[xs < avg.s]
    lin_tol = 1e-6 * (1.0 + float(target.max()))
    slope_gap, step_excess, grid_gap = 0.0, 0.0, 0.0
    if below.size:
        anchor = avg.s - 1
        expected = avg.u.at(anchor) + p.c_unit * (anchor - below)
        slope_gap = float(np.abs(avg.u.at(below) - expected).max())
        step_excess = float(avg.u.at(anchor) - avg.u.at(avg.s) - p.c_unit)
        grid_gap = acoe_residual(avg, p, (lo, hi)).corollary_gap
    details = {"sup_gaps": sups, "worst_x": worst, "allowed": limit, "decreasing": decreasing,
               "linear_region_gap": slope_gap, "step_excess_at_s": step_excess,
               "step_allowance": grid_gap, "window": [lo, hi]}
    witnesses = []
    if sups[-1] > limit:
        witnesses.append({"alpha": records[-1].alpha, "x": worst[-1], "gap": sups[-1]})
    if not decreasing:
        witnesses.append({"issue": "sup gap not decreasing", "sup_gaps": sups})
    if slope_gap > lin_tol:
        witnesses.append({"issue": "u not linear with slope c_unit below s", "gap": slope_gap})
    if not -lin_tol <= step_excess <= grid_gap + lin_tol:
        witnesses.append({"issue": "step of u at s outside [0, K + H(S) - H(s)]",
                          "step_excess": step_excess, "allowance": grid_gap})
    return CheckReport(name, status_of(not witnesses), details, witnesses)


def modulus(u: ValueTable, delta: int, lo: int, hi: int) -> float:
    """max |u(x) - u(y)| over x, y in [lo, hi] with |x - y| <= delta."""
    vals = u.at(np.arange(lo, hi + 1))
    best = 0.0
    for k in range(1, min(int(delta), vals.size - 1) + 1):
        best = max(best, float(np.abs(vals[k:] - vals[:-k]).max()))
    return best


def equicontinuity_probe(records: Sequence[SweepRecord], delta: int, window) -> CheckReport:
    if delta < 0:
        raise ProblemError("delta must be a nonnegative integer")
    lo, hi = int(window[0]), int(window[1])
    moduli = [modulus(r.u_alpha, delta, lo, hi) for r in records]
    details = {"delta": delta, "window": [lo, hi], "moduli": moduli,
               "max_modulus": max(moduli, default=0.0)}
    if len(moduli) < MIN_RECORDS:
        return CheckReport("equicontinuity", INCONCLUSIVE, details)
    tail = moduli[-MIN_RECORDS:]
    ok = max(tail) <= EQUICONTINUITY_GROWTH * min(tail) + 1e-12
    witnesses = [] if ok else [{"last_moduli": tail}]
    return CheckReport("equicontinuity", status_of(ok), details, witnesses)


def acoe_residual(avg: AverageSolution, p: ProblemSpec, window=None) -> AcoeReport:
    """Both sides of w + u(x) = min(H(x), K + min_{y>x} H(y)) - c̄x on the window."""
    lo, hi = _window(p, window)
    H = build_G(avg.u, p, 1.0)
    gap = np.abs(avg.w + avg.u.values - bellman_from_G(H.values, p.K, p.c_unit, p.grid))
    part = gap[lo - p.x_min: hi - p.x_min + 1]
    s, S = extract_thresholds(H, p.K)
    return AcoeReport(
        residual=float(part.max()),
        corollary_gap=abs(H.at(s) - p.K - H.at(S)),
        s=s,
        S=S,
        consistent=(s, S) == (avg.s, avg.S),
        worst_x=lo + int(np.argmax(part)),
    )


# --- Lemma-level suites ---

def _excess_over_suffix_min(f: np.ndarray) -> np.ndarray:
    """f(x) - min_{y >= x} f(y)."""
    return f - np.minimum.accumulate(f[::-1])[::-1]


def _tol(values, base: float) -> float:
    return base * (1.0 + float(np.abs(values).max()))


def lemma_suite(record: SweepRecord, p: ProblemSpec, window=None, tol: float = LEMMA_TOL) -> CheckReport:
    """Pointwise inequalities of the discounted solution on the interior window."""
    lo, hi = _window(p, window)
    sl = slice(lo - p.x_min, hi - p.x_min + 1)
    alpha = record.alpha
    vbar = record.transformed.v.values[sl]
    gbar = record.transformed.g.values[sl]
    h_alpha = transformed_values(p, alpha)[sl]
    v = record.solution.v.values[sl]
    xs = np.arange(lo, hi + 1)
    parts = []

    excess = _excess_over_suffix_min(vbar) - p.K
    bad = xs[excess > _tol(vbar, tol)]
    parts.append(CheckReport("K-bounded monotonicity", status_of(bad.size == 0),
                             {"max_excess": float(excess.max())}, bad.tolist()))

    f = gbar - h_alpha
    excess = _excess_over_suffix_min(f) - alpha * p.K
    bad = xs[excess > _tol(gbar, tol)]
    parts.append(CheckReport("G increment bound", status_of(bad.size == 0),
                             {"max_excess": float(excess.max())}, bad.tolist()))

    upto = xs <= record.r_alpha
    rises = []
    for label, arr in (("v_bar", vbar), ("G_bar", gbar)):
        head = arr[upto]
        steps = np.diff(head)
        rises += [{"table": label, "x": int(x)} for x in xs[upto][1:][steps > _tol(arr, tol)]]
    parts.append(CheckReport("monotone left of r_alpha", status_of(not rises), {}, rises))

    chain = [record.s_alpha, record.r_alpha, record.S_alpha, record.S_star_alpha]
    chain_ok = chain == sorted(chain)
    parts.append(CheckReport("threshold bound chain", status_of(chain_ok), {"chain": chain},
                             [] if chain_ok else [{"alpha": alpha, "chain": chain}]))

    neg = xs[v < -_tol(v, tol)]
    parts.append(CheckReport("nonnegative value", status_of(neg.size == 0), {}, neg.tolist()))

    identity = np.abs(vbar - p.c_unit * xs - v)
    allowed = 2.0 * record.tol + _tol(v, 1e-9)
    parts.append(CheckReport("transformed value identity", status_of(identity.max() <= allowed),
                             {"max_gap": float(identity.max()), "allowed": allowed},
                             xs[identity > allowed].tolist()))
    return combine(f"lemma suite alpha={alpha}", parts)


def average_lemma_suite(avg: AverageSolution, p: ProblemSpec, window=None, tol: float = LEMMA_TOL,
                        solver_tol: float = 0.0) -> CheckReport:
    """H monotone left of r_1, the H increment bound, and u(x) + c̄x <= u(y) + c̄y + K."""
    lo, hi = _window(p, window)
    sl = slice(lo - p.x_min, hi - p.x_min + 1)
    xs = np.arange(lo, hi + 1)
    H = build_G(avg.u, p, 1.0).values[sl]
    h_one = transformed_values(p, 1.0)[sl]
    u = avg.u.values[sl]
    r_1 = check_assumptions(p, 1.0).r_alpha
    slack = 10.0 * solver_tol
    parts = []

    head = H[xs <= r_1]
    rises = xs[xs <= r_1][1:][np.diff(head) > _tol(H, tol) + slack]
    parts.append(CheckReport("H monotone left of r_1", status_of(rises.size == 0), {}, rises.tolist()))

    excess = _excess_over_suffix_min(H - h_one) - p.K
    bad = xs[excess > _tol(H, tol) + slack]
    parts.append(CheckReport("H increment bound", status_of(bad.size == 0),
                             {"max_excess": float(excess.max())}, bad.tolist()))

    excess = _excess_over_suffix_min(u + p.c_unit * xs) - p.K
    bad = xs[excess > _tol(u + p.c_unit * xs, tol) + slack]
    parts.append(CheckReport("K-bounded u + c x", status_of(bad.size == 0),
                             {"max_excess": float(excess.max())}, bad.tolist()))
    return combine("average lemma suite", parts)


def check_r_monotone(records: Sequence[SweepRecord], p: ProblemSpec) -> CheckReport:
    r_values = [r.r_alpha for r in records]
    r_1 = check_assumptions(p, 1.0).r_alpha
    witnesses = [{"alpha": b.alpha, "r": b.r_alpha, "previous": a.r_alpha}
                 for a, b in zip(records, records[1:]) if b.r_alpha < a.r_alpha]
    witnesses += [{"alpha": r.alpha, "r": r.r_alpha, "r_1": r_1} for r in records if r.r_alpha > r_1]
    return CheckReport("r_alpha monotone", status_of(not witnesses), {"r": r_values, "r_1": r_1}, witnesses)


def check_m_bar_bracket(records: Sequence[SweepRecord], c_unit: float) -> CheckReport:
    """m_α + c̄s_α <= m̄_α <= m_α + c̄·argmin v_α."""
    witnesses = []
    for r in records:
        x_hat = int(r.solution.v.grid[int(np.argmin(r.solution.v.values))])
        low = r.m_alpha + c_unit * r.s_alpha
        high = r.m_alpha + c_unit * x_hat
        slack = 2.0 * r.tol + 1e-9 * (1.0 + abs(r.m_bar_alpha))
        if not (low - slack <= r.m_bar_alpha <= high + slack):
            witnesses.append({"alpha": r.alpha, "low": low, "m_bar": r.m_bar_alpha, "high": high})
    return CheckReport("m_bar bracket", status_of(not witnesses), {"records": len(records)}, witnesses)


def sweep_checks(records: Sequence[SweepRecord], avg: AverageSolution, p: ProblemSpec,
                 window=None, rvi_tol: float = 0.0) -> List[CheckReport]:
    """Every sweep-level check, in the order the CLI prints them."""
    window = _window(p, window)
    reports = [
        check_threshold_convergence(records, avg, p, window),
        check_gain_limits(records, avg),
        check_u_convergence(records, avg, p, window),
        equicontinuity_probe(records, 1, window),
        check_r_monotone(records, p),
        check_m_bar_bracket(records, p.c_unit),
        average_lemma_suite(avg, p, window, solver_tol=rvi_tol),
    ]
    reports += [lemma_suite(r, p, window) for r in records]
    reports += [check_lemma_value_identity(r, p.K) for r in records]
    gcal = compute_gcal(avg.h_table, p.K) if avg.h_table is not None else None
    if gcal is not None and check_assumptions(p, 1.0).strictly_decreasing_left_of_r:
        # on the integer grid the set may be empty; it can never hold more than s
        ok = gcal.members in ((), (avg.s,))
        reports.append(CheckReport("G-set within {s}", status_of(ok), gcal.to_dict(),
                                   [] if ok else [gcal.to_dict()]))
    return reports
