"""Command line entry point: ``fembem run | rates | verify | compare``."""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .adapt import RUNLOG_COLUMNS, AdaptiveConfig, RunLog, run
from .coupling import CouplingMethod, SolverConfig
from .problems import PROBLEM_NAMES, make_problem
from .rates import fit_rate

__all__ = ["main", "build_parser", "read_config"]

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2
CONFIG_KEYS = {"theta": float, "tol": float, "max_elements": int, "quadrature_order": int}
SUPPORTED_QUADRATURE_ORDERS = (5,)


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}; allowed {sorted(CONFIG_KEYS)}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fembem", description="Adaptive FEM-BEM coupling benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one adaptive or uniform benchmark")
    r.add_argument("--problem", required=True, choices=PROBLEM_NAMES)
    r.add_argument("--coupling", required=True, choices=[m.value for m in CouplingMethod])
    r.add_argument("--strategy", default="adaptive", choices=["adaptive", "uniform"])
    r.add_argument("--theta", type=float, default=None)
    r.add_argument("--max-elements", type=int, default=None)
    r.add_argument("--out", required=True, help="CSV run log")
    r.add_argument("--plot", default=None, help="optional SVG convergence plot")
    r.add_argument("--c", type=float, default=0.25, help="anisotropy factor (lshape-anisotropic, zshape-unknown)")
    r.add_argument("--solver", default="newton", choices=["newton", "picard"])
    r.add_argument("--stabilized", action="store_true", help="solve the rank-one stabilized system")
    r.add_argument("--config", default=None, help="key = value defaults (theta, tol, max_elements, quadrature_order)")

    q = sub.add_parser("rates", help="fit convergence rates from a run log")
    q.add_argument("csv")
    q.add_argument("--quantity", default="est_total", choices=[c for c in RUNLOG_COLUMNS if c.startswith(("err", "est"))])
    q.add_argument("--window", type=int, default=None, help="trailing levels (default 12, or 6 with --strategy uniform)")
    q.add_argument("--strategy", default="adaptive", choices=["adaptive", "uniform"])

    v = sub.add_parser("verify", help="run randomized self-checks")
    v.add_argument("--suite", default="all", choices=["ops", "coupling", "adapt", "all"])
    v.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("compare", help="all couplings x both strategies on one problem")
    c.add_argument("--problem", required=True, choices=PROBLEM_NAMES)
    c.add_argument("--out", required=True, help="merged CSV (coupling, strategy + run log columns)")
    c.add_argument("--max-elements", type=int, default=None)
    c.add_argument("--theta", type=float, default=None)
    c.add_argument("--c", type=float, default=0.25)
    c.add_argument("--jobs", type=int, default=1, help="worker processes")
    c.add_argument("--plot", default=None)
    c.add_argument("--config", default=None)
    return p


def _settings(args) -> dict:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    order = cfg.get("quadrature_order", 5)
    if order not in SUPPORTED_QUADRATURE_ORDERS:
        raise UsageError(f"quadrature_order {order} unsupported; available {SUPPORTED_QUADRATURE_ORDERS}")
    theta = args.theta if args.theta is not None else cfg.get("theta", 0.25)
    max_el = args.max_elements if args.max_elements is not None else cfg.get("max_elements", 20000)
    if not 0.0 < theta <= 1.0:
        raise UsageError("--theta must lie in (0, 1]")
    if max_el < 1:
        raise UsageError("--max-elements must be positive")
    return {"theta": theta, "max_elements": max_el, "tol": cfg.get("tol", 1e-10)}


def _run_one(problem_name: str, c: float, coupling: str, strategy: str, settings: dict,
             solver: str = "newton", stabilized: bool = False) -> RunLog:
    problem = make_problem(problem_name, c=c)
    cfg = AdaptiveConfig(
        method=coupling,
        theta=settings["theta"],
        max_elements=settings["max_elements"],
        solver=SolverConfig(tol=settings["tol"], strategy=solver),
        strategy=strategy,
        stabilized=stabilized,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        return run(problem, cfg)


def _cmd_run(args) -> int:
    settings = _settings(args)
    log = _run_one(args.problem, args.c, args.coupling, args.strategy, settings, args.solver, args.stabilized)
    log.write_csv(args.out)
    last = log.rows[-1]
    print(f"{len(log.rows)} levels, final #T = {last.n_triangles}, est_total = {last.est_total:.4e}"
          + (f", err_omega = {last.err_omega:.4e}" if last.err_omega is not None else ""))
    if args.plot:
        from .plotting import plot_convergence

        plot_convergence([log], args.plot, title=f"{args.problem} {args.coupling} {args.strategy}")
    if log.failed:
        print(f"solver failure: {last.flags}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_rates(args) -> int:
    try:
        log = RunLog.read_csv(args.csv)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    log.strategy = args.strategy
    try:
        report = fit_rate(log, args.quantity, args.window)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{report.alpha:.6g}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .selfcheck import verify

    results = verify(args.suite, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_SOLVER


def _cmd_compare(args) -> int:
    settings = _settings(args)
    jobs = [(args.problem, args.c, m.value, s, settings) for m in CouplingMethod for s in ("uniform", "adaptive")]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            logs = list(pool.map(_run_one, *zip(*jobs)))
    else:
        logs = [_run_one(*j) for j in jobs]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("coupling", "strategy") + RUNLOG_COLUMNS)
        for log in logs:
            for row in log.rows:
                w.writerow([log.method, log.strategy] + row.row())
    for log in logs:
        print(f"{log.method:>4} {log.strategy:>8}: {len(log.rows)} levels, final #T = {log.rows[-1].n_triangles}"
              + ("  FAILED" if log.failed else ""))
    if args.plot:
        from .plotting import plot_convergence

        plot_convergence(logs, args.plot, quantities=("err_omega",) if logs[0].rows[0].err_omega is not None
                         else ("est_total",), title=args.problem)
    return EXIT_SOLVER if any(log.failed for log in logs) else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"run": _cmd_run, "rates": _cmd_rates, "verify": _cmd_verify, "compare": _cmd_compare}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"fembem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
