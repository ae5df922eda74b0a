#!/usr/bin/env python3
"""Command-line entry point: validate, solve, sweep, lead-time, examples, evaluate, simulate.

Exit codes: 0 success, 1 usage or parse error, 2 a check failed,
3 a solver did not converge.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from convergence_lab import DEFAULT_SCHEDULE, SWEEP_TOL, run_sweep, sweep_checks, validate_schedule
from counterexamples import (
    SPREAD_THRESHOLD,
    TruncationError,
    block_centered_schedule,
    example38_check,
    example62_check,
    oscillation_report,
    suggested_schedule,
)
from dp_core import (
    DEFAULT_TOL,
    ConvergenceError,
    relative_value_iteration,
    sS_actions,
    value_iteration_discounted,
)
from leadtime import (
    MAX_AUGMENTED_L,
    StateSpaceTooLargeError,
    check_reduction_identity,
    load_leadtime,
    reduce,
    simulate_pipeline,
)
from model import ProblemError, check_assumptions, load_problem
from policy import ReducibleChainError, SSPolicy, evaluate_average, evaluate_discounted, simulate
from reports import (
    INCONCLUSIVE,
    OSCILLATION_HEADER,
    SOLUTION_HEADER,
    SWEEP_HEADER,
    CheckReport,
    solution_rows,
    status_of,
    write_csv,
    write_json,
)

# --- Configuration ---
DEFAULT_PROBLEM = str(Path(__file__).resolve().parent / "problems" / "canon1.json")
DEFAULT_OUT = "results"
DEFAULT_ALPHA = 0.9
DEFAULT_SEED = 0
SIM_HORIZON = 100_000
LEADTIME_HORIZON = 1_000_000
ACOE_FACTOR = 5.0  # ACOE residual allowance, in units of the RVI tolerance
CHAIN_ALPHAS = [0.5, 0.9, 1.0 - 1.0 / 33.0, 1.0 - 1.0 / 153.0]
LOG_FORMAT = "[%(levelname)s] %(message)s"

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_CONVERGENCE = 0, 1, 2, 3

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    command: str
    problem: str = DEFAULT_PROBLEM
    out: Path = Path(DEFAULT_OUT)
    tol: Optional[float] = None
    seed: int = DEFAULT_SEED
    jobs: int = 1
    fmt: str = "both"
    alpha: Optional[float] = None
    average: bool = False
    schedule: List[float] = field(default_factory=list)
    L: Optional[int] = None
    s: Optional[int] = None
    S: Optional[int] = None
    horizon: Optional[int] = None
    replications: int = 1

    def __post_init__(self):
        self.out = Path(self.out)
        if self.jobs < 1:
            raise ProblemError(f"--jobs must be >= 1, got {self.jobs}")
        if self.tol is not None and self.tol <= 0.0:
            raise ProblemError(f"--tol must be positive, got {self.tol}")
        if self.schedule:
            self.schedule = validate_schedule(self.schedule)

    @property
    def csv(self) -> bool:
        return self.fmt in ("csv", "both")

    @property
    def json(self) -> bool:
        return self.fmt in ("json", "both")

    def output_dir(self) -> Path:
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ProblemError(f"cannot create output directory {self.out}: {e}") from e
        if not os.access(self.out, os.W_OK):
            raise ProblemError(f"output directory {self.out} is not writable")
        return self.out


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- Output helpers ---

def print_report(report: CheckReport, indent: str = "") -> None:
    print(f"{indent}{report.line()}")
    for part in report.details.get("parts", []):
        mark = CheckReport(part["name"], part["status"], {}, part["witnesses"])
        print(f"{indent}  {mark.line()}")


def exit_for(reports: List[CheckReport]) -> int:
    return EXIT_CHECK if any(r.failed for r in reports) else EXIT_OK


def emit_solution(cfg: RunConfig, stem: str, grid, v, g, actions, doc: dict) -> None:
    out = cfg.output_dir()
    if cfg.csv:
        write_csv(out / f"{stem}.csv", SOLUTION_HEADER, solution_rows(grid, v, g, actions))
    if cfg.json:
        write_json(out / f"{stem}.json", doc)


def parse_schedule(text: Optional[str]) -> List[float]:
    if not text:
        return []
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError as e:
        raise ProblemError(f"--schedule: {e}") from e


def _discount(cfg: RunConfig) -> float:
    alpha = DEFAULT_ALPHA if cfg.alpha is None else cfg.alpha
    if not 0.0 < alpha < 1.0:
        raise ProblemError(f"--alpha must be in (0, 1), got {alpha}")
    return alpha


# --- Commands ---

def cmd_validate(cfg: RunConfig) -> int:
    p = load_problem(cfg.problem)
    alpha = 1.0 if cfg.alpha is None else cfg.alpha
    if not 0.0 < alpha <= 1.0:
        raise ProblemError(f"--alpha must be in (0, 1], got {alpha}")
    report = check_assumptions(p, alpha)
    print(f"Problem {cfg.problem}: K={p.K} c_unit={p.c_unit} grid=[{p.x_min}, {p.x_max}] "
          f"E[D]={p.demand.mean:.6g}")
    mark = "✓" if report.quasiconvex else "✗"
    print(f"{mark} E[h_alpha(x-D)] quasiconvex at alpha={alpha}"
          + ("" if report.quasiconvex else f" (witness x<y<z: {report.witness})"))
    mark = "✓" if report.left_limit_ok else "✗"
    print(f"{mark} left limit {report.left_limit} exceeds K + min")
    print(f"  r_alpha={report.r_alpha} S*_alpha={report.S_star_alpha} alpha* bound={report.alpha_star_bound:.6g}")
    if cfg.json:
        write_json(cfg.output_dir() / "validate.json", report.to_dict())
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_solve(cfg: RunConfig) -> int:
    p = load_problem(cfg.problem)
    tol = DEFAULT_TOL if cfg.tol is None else cfg.tol
    if cfg.average:
        avg = relative_value_iteration(p, tol)
        actions = sS_actions(p.x_min, p.n, avg.s, avg.S)
        emit_solution(cfg, "average", p.grid, avg.u.values, avg.h_table.values, actions, avg.to_dict())
        print(f"Average cost w = {avg.w:.10g}  (s, S) = ({avg.s}, {avg.S})  iterations = {avg.iterations}")
        ok = avg.acoe_residual <= ACOE_FACTOR * tol
        report = CheckReport("ACOE residual on the interior window", status_of(ok),
                             {"residual": avg.acoe_residual, "allowed": ACOE_FACTOR * tol})
        print_report(report)
        return exit_for([report])

    alpha = _discount(cfg)
    sol = value_iteration_discounted(p, alpha, tol)
    bounds = check_assumptions(p, alpha)
    actions = sS_actions(p.x_min, p.n, sol.s, sol.S)
    doc = dict(sol.to_dict(), r_alpha=bounds.r_alpha, S_star_alpha=bounds.S_star_alpha)
    emit_solution(cfg, "discounted", p.grid, sol.v.values, sol.g.values, actions, doc)
    print(f"alpha = {alpha}  (s, S) = ({sol.s}, {sol.S})  v({p.midpoint}) = {sol.v.at(p.midpoint):.10g}  "
          f"iterations = {sol.iterations}")
    chain = sol.s <= bounds.r_alpha <= sol.S <= bounds.S_star_alpha
    report = CheckReport("s <= r_alpha <= S <= S*_alpha", status_of(chain),
                         {"s": sol.s, "r": bounds.r_alpha, "S": sol.S, "S_star": bounds.S_star_alpha})
    print_report(report)
    return exit_for([report])


def cmd_sweep(cfg: RunConfig) -> int:
    p = load_problem(cfg.problem)
    schedule = cfg.schedule or DEFAULT_SCHEDULE
    tol = SWEEP_TOL if cfg.tol is None else cfg.tol
    rvi_tol = DEFAULT_TOL
    print(f"Sweeping {len(schedule)} discount factors with {cfg.jobs} worker(s)...")
    records = run_sweep(p, schedule, tol, cfg.jobs)
    avg = relative_value_iteration(p, rvi_tol)
    reports = sweep_checks(records, avg, p, rvi_tol=rvi_tol)
    for r in records:
        print(f"  alpha={r.alpha:.6f}  s={r.s_alpha:4d}  S={r.S_alpha:4d}  (1-alpha)m={r.scaled_gain:.8f}")
    print(f"  RVI: w={avg.w:.8f}  s={avg.s}  S={avg.S}")
    for report in reports:
        print_report(report)
    out = cfg.output_dir()
    if cfg.csv:
        write_csv(out / "sweep.csv", SWEEP_HEADER, (r.row() for r in records))
    if cfg.json:
        write_json(out / "sweep.json", {"records": [r.to_dict() for r in records],
                                        "average": avg.to_dict(),
                                        "checks": [r.to_dict() for r in reports]})
    return exit_for(reports)


def cmd_leadtime(cfg: RunConfig) -> int:
    spec = load_leadtime(cfg.problem, cfg.L)
    alpha = _discount(cfg)
    tol = DEFAULT_TOL if cfg.tol is None else cfg.tol
    reports = []
    if spec.L <= MAX_AUGMENTED_L:
        try:
            reports.append(check_reduction_identity(spec, alpha, tol))
        except StateSpaceTooLargeError as e:
            reports.append(CheckReport("lead-time reduction identity", INCONCLUSIVE, {"reason": str(e)}))
    reduced = reduce(spec)
    avg = relative_value_iteration(reduced, tol)
    horizon = cfg.horizon or LEADTIME_HORIZON
    stats = simulate_pipeline(SSPolicy(avg.s, avg.S), spec, horizon, cfg.seed, cfg.replications)
    gap = abs(stats.mean_cost_per_period - avg.w)
    ok = gap <= stats.confidence_halfwidth
    reports.append(CheckReport("pipeline simulation inside the 95% interval around w", status_of(ok),
                               {"w": avg.w, "mean": stats.mean_cost_per_period,
                                "halfwidth": stats.confidence_halfwidth, "gap": gap}))
    print(f"L = {spec.L}: reduced (s, S) = ({avg.s}, {avg.S})  w = {avg.w:.8f}")
    print(f"  simulated mean = {stats.mean_cost_per_period:.8f} ± {stats.confidence_halfwidth:.8f} "
          f"over {horizon} periods")
    for report in reports:
        print_report(report)
    if cfg.json:
        write_json(cfg.output_dir() / "leadtime.json",
                   {"L": spec.L, "alpha": alpha, "average": avg.to_dict(), "simulation": stats.to_dict(),
                    "checks": [r.to_dict() for r in reports]})
    return exit_for(reports)


def cmd_examples(cfg: RunConfig) -> int:
    reports = [example38_check(), example62_check(CHAIN_ALPHAS)]
    published = oscillation_report(suggested_schedule())
    centered = oscillation_report(block_centered_schedule(5, 8), SPREAD_THRESHOLD)
    reports.append(centered.check)
    print(f"f(alpha) spread at alpha = 1 - 1/D(k), k=2..6: {published.spread:.4f}")
    print(f"f(alpha) spread at block-centered alphas: {centered.spread:.4f} (needs >= {SPREAD_THRESHOLD})")
    for report in reports:
        print_report(report)
    out = cfg.output_dir()
    if cfg.csv:
        write_csv(out / "oscillation.csv", OSCILLATION_HEADER, published.rows + centered.rows)
    if cfg.json:
        write_json(out / "examples.json", {"checks": [r.to_dict() for r in reports],
                                           "suggested": published.to_dict(),
                                           "block_centered": centered.to_dict()})
    return exit_for(reports)


def _policy_from(cfg: RunConfig, p) -> SSPolicy:
    if cfg.s is not None and cfg.S is not None:
        return SSPolicy(cfg.s, cfg.S)
    if cfg.s is not None or cfg.S is not None:
        raise ProblemError("give both --s and --S, or neither")
    avg = relative_value_iteration(p, DEFAULT_TOL if cfg.tol is None else cfg.tol)
    logger.info("no policy given; using the average-cost optimum (%d, %d)", avg.s, avg.S)
    return SSPolicy(avg.s, avg.S)


def cmd_evaluate(cfg: RunConfig) -> int:
    p = load_problem(cfg.problem)
    pol = _policy_from(cfg, p)
    if cfg.average:
        result = evaluate_average(pol, p)
        print(f"(s, S) = ({pol.s}, {pol.S})  gain = {result.gain:.10g}  residual = {result.residual:.3e}")
        table = result.bias
    else:
        alpha = _discount(cfg)
        result = evaluate_discounted(pol, p, alpha)
        print(f"(s, S) = ({pol.s}, {pol.S})  alpha = {alpha}  "
              f"value({p.midpoint}) = {result.value.at(p.midpoint):.10g}")
        table = result.value
    out = cfg.output_dir()
    if cfg.csv:
        write_csv(out / "evaluate.csv", ["x", "value"], zip(table.grid.tolist(), table.values.tolist()))
    if cfg.json:
        write_json(out / "evaluate.json", dict(result.to_dict(), policy=pol.to_dict()))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    p = load_problem(cfg.problem)
    pol = _policy_from(cfg, p)
    stats = simulate(pol, p, cfg.horizon or SIM_HORIZON, cfg.replications, cfg.seed)
    print(f"(s, S) = ({pol.s}, {pol.S})  mean cost = {stats.mean_cost_per_period:.8f} "
          f"± {stats.confidence_halfwidth:.8f}  order frequency = {stats.order_frequency:.4f}")
    if cfg.json:
        write_json(cfg.output_dir() / "simulate.json", dict(stats.to_dict(), policy=pol.to_dict()))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "leadtime": cmd_leadtime,
    "examples": cmd_examples,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


# --- Argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", default=DEFAULT_PROBLEM, help="problem JSON file")
    common.add_argument("--out", default=DEFAULT_OUT, help="output directory")
    common.add_argument("--tol", type=float, default=None, help="solver tolerance")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--format", dest="fmt", choices=["csv", "json", "both"], default="both")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = CliParser(description="(s,S) inventory solver and verification lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    sub.add_parser("validate", parents=[common], help="check the instance assumptions") \
        .add_argument("--alpha", type=float)
    solve = sub.add_parser("solve", parents=[common], help="discounted or average-cost solve")
    mode = solve.add_mutually_exclusive_group()
    mode.add_argument("--alpha", type=float)
    mode.add_argument("--average", action="store_true")

    sweep = sub.add_parser("sweep", parents=[common], help="vanishing-discount sweep and checks")
    sweep.add_argument("--schedule", help="comma-separated discount factors")

    lead = sub.add_parser("leadtime", parents=[common], help="lead-time reduction checks")
    lead.add_argument("--L", type=int)
    lead.add_argument("--alpha", type=float)
    lead.add_argument("--horizon", type=int)
    lead.add_argument("--replications", type=int, default=1)

    sub.add_parser("examples", parents=[common], help="run both counterexample suites")

    for name in ("evaluate", "simulate"):
        cmd = sub.add_parser(name, parents=[common])
        cmd.add_argument("--s", type=int)
        cmd.add_argument("--S", type=int)
        if name == "evaluate":
            group = cmd.add_mutually_exclusive_group()
            group.add_argument("--alpha", type=float)
            group.add_argument("--average", action="store_true")
        else:
            cmd.add_argument("--horizon", type=int)
            cmd.add_argument("--replications", type=int, default=1)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        problem=args.problem,
        out=Path(args.out),
        tol=args.tol,
        seed=args.seed,
        jobs=args.jobs,
        fmt=args.fmt,
        alpha=getattr(args, "alpha", None),
        average=getattr(args, "average", False),
        schedule=parse_schedule(getattr(args, "schedule", None)),
        L=getattr(args, "L", None),
        s=getattr(args, "s", None),
        S=getattr(args, "S", None),
        horizon=getattr(args, "horizon", None),
        replications=getattr(args, "replications", 1),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT, force=True)
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except ConvergenceError as e:
        logger.error("%s", e)
        print(f"✗ solver did not converge: residual {e.residual:.3e} after {e.iterations} iterations")
        return EXIT_CONVERGENCE
    except (ProblemError, TruncationError, StateSpaceTooLargeError, ReducibleChainError) as e:
        logger.error("%s", e)
        print(f"✗ {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
