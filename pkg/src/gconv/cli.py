"""gconv command line.

    gconv driver conv 1,2 1.5,3
    gconv expect --driver 1,2 --payoff "x1*x1" --times 1
    gconv infconv --d1 1,2 --d2 1.5,3 --payoff "sin(x1)" --out trace.csv --format csv
    gconv verify moments

Every record is flat, has sorted keys and echoes the grid configuration.
Exit codes: 0 success, 1 failed check or engine error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .drivers import Driver, convolve_many
from .errors import GConvError
from .expectation import conditional, evaluate, evaluate_record
from .infconv import (INFCONV_CONFIG, InfConvProblem, OptimizerSettings, detect_divergence, minimize,
                      require_proper)
from .lattice import evaluate_lattice
from .payoff_dsl import PayoffSyntaxError, to_payoff
from .pde import SolveConfig, write_csv_columns
from .risk import optimal_transfer
from .verify import SUITES, run_suite
from . import plotting

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _clean(v):
    """JSON-safe scalar: numpy types unwrapped, non-finite floats as text."""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    return v


class Emitter:
    """Collects records, prints them, and mirrors them to --out."""

    def __init__(self, fmt: str, out: Path | None, echo: dict):
        self.fmt, self.out, self.echo = fmt, out, echo
        self.buf = io.StringIO()

    def records(self, recs):
        recs = [{k: _clean(v) for k, v in {**r, **self.echo}.items()} for r in recs]
        if not recs:
            return
        if self.fmt == "json":
            for r in recs:
                self.buf.write(json.dumps(r, sort_keys=True) + "\n")
            return
        keys = sorted({k for r in recs for k in r})
        w = csv.writer(self.buf, lineterminator="\n")
        w.writerow(keys)
        for r in recs:
            w.writerow([";".join(map(str, r[k])) if isinstance(r.get(k), list) else
                        ("" if r.get(k) is None else r.get(k)) for k in keys])

    def summary(self, rec):
        """Closing record; JSON in both formats."""
        rec = {k: _clean(v) for k, v in {**rec, **self.echo}.items()}
        self.buf.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self):
        text = self.buf.getvalue()
        sys.stdout.write(text)
        if self.out is not None:
            self.out.write_text(text)


# -- argument parsing ----------------------------------------------------------------


def _driver(text):
    try:
        return Driver.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _times(text):
    try:
        ts = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"times must be comma-separated numbers, got {text!r}") from None
    return ts


def _floats(text):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("grid and output")
    g.add_argument("--grid-n", type=int, help="spatial grid points (odd)")
    g.add_argument("--grid-k", type=float, help="domain half-width in units of sigma_max*sqrt(T)")
    g.add_argument("--quad-order", type=int, help="Gauss quadrature order of the oracle and tail test")
    g.add_argument("--out", type=Path, help="also write the records here; figures go alongside")
    g.add_argument("--format", choices=("json", "csv"), default="json")

    ap = argparse.ArgumentParser(prog="gconv", description="G-expectations and their inf-convolutions.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("driver", parents=[common], help="driver algebra")
    p.add_argument("op", choices=("conv",))
    p.add_argument("drivers", nargs="+", type=_driver, metavar="LO,HI")

    def payoff_args(p, times="1"):
        p.add_argument("--payoff", required=True, help='expression in x1..x3, e.g. "sin(x1)+0.3*x1*x1"')
        p.add_argument("--times", type=_times, default=_times(times), help="comma-separated observation times")

    p = sub.add_parser("expect", parents=[common], help="G-expectation of a payoff")
    p.add_argument("--driver", type=_driver, required=True)
    payoff_args(p)
    p.add_argument("--oracle", choices=("pde", "lattice"), default="pde")
    p.add_argument("--steps", type=int, default=512, help="lattice time steps")

    p = sub.add_parser("conditional", parents=[common], help="conditional G-expectation given the first j increments")
    p.add_argument("--driver", type=_driver, required=True)
    payoff_args(p)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--at", type=_floats, action="append", help="point (x1,..,xj); repeatable")

    def optimizer_args(p):
        p.add_argument("--contract-index", type=int, help="contract depends on the first c increments")
        p.add_argument("--n-ctrl", type=int, help="control points per axis (default 41, or 9 for two axes)")
        p.add_argument("--max-iters", type=int, default=OptimizerSettings.max_iters)
        p.add_argument("--tol", type=float, default=OptimizerSettings.tol)

    p = sub.add_parser("infconv", parents=[common], help="minimize E_1[X-F] + E_2[F]")
    p.add_argument("--d1", type=_driver, required=True)
    p.add_argument("--d2", type=_driver, required=True)
    payoff_args(p)
    optimizer_args(p)
    p.add_argument("--emit-contract", type=Path, help='write the best contract as CSV "x,psi"')

    p = sub.add_parser("transfer", parents=[common], help="optimal risk transfer from agent A to agent B")
    p.add_argument("--dA", type=_driver, required=True)
    p.add_argument("--dB", type=_driver, required=True)
    payoff_args(p)
    optimizer_args(p)
    p.add_argument("--contract-csv", type=Path, help='where to write F* as CSV "x,F"')

    p = sub.add_parser("divergence", parents=[common], help="lambda-slope of J(-lambda B_t^2) for disjoint drivers")
    p.add_argument("--d1", type=_driver, required=True)
    p.add_argument("--d2", type=_driver, required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--lambdas", type=_floats, default=[1.0, 2.0, 4.0, 8.0])

    p = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--timings", action="store_true", help="include wall-clock checks in the output")
    return ap


def _config(args, base: SolveConfig) -> SolveConfig:
    kw = {}
    if args.grid_n is not None:
        kw["n_points"] = args.grid_n
    if args.grid_k is not None:
        kw["k"] = args.grid_k
    if args.quad_order is not None:
        kw["quad_order"] = args.quad_order
    try:
        return replace(base, **kw)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _payoff(args):
    try:
        return to_payoff(args.payoff, args.times)
    except (PayoffSyntaxError, ValueError) as e:
        raise UsageError(f"--payoff/--times: {e}") from None


def _problem_kw(args):
    kw = {}
    if args.contract_index is not None:
        kw["contract_index"] = args.contract_index
    if args.n_ctrl is not None:
        kw["n_ctrl"] = args.n_ctrl
    if args.max_iters < 0 or not args.tol >= 0:
        raise UsageError("--max-iters and --tol must be non-negative")
    return kw, OptimizerSettings(max_iters=args.max_iters, tol=args.tol)


# -- subcommands -------------------------------------------------------------------------


def cmd_driver(args, cfg, em):
    res = convolve_many(args.drivers)
    rec = {"op": args.op, "drivers": [str(d) for d in args.drivers], "result": str(res),
           "degenerate": res.is_degenerate}
    if not res.is_degenerate:
        rec.update(sigma_lo=res.driver.sigma_lo, sigma_hi=res.driver.sigma_hi)
    em.records([rec])
    return EXIT_OK


def cmd_expect(args, cfg, em):
    X = _payoff(args)
    if args.oracle == "lattice":
        if args.steps < 1:
            raise UsageError("--steps must be positive")
        rec = evaluate_lattice(X, args.driver, args.steps).as_record()
    else:
        r = evaluate_record(X, args.driver, cfg)
        rec = {"value": r["value"], "error_estimate": r["error_estimate"], "oracle": "pde", **r["grid_config_echo"]}
    rec.update(driver=str(args.driver), payoff=X.label, times=list(X.times))
    em.records([rec])
    return EXIT_OK


def cmd_conditional(args, cfg, em):
    X = _payoff(args)
    if not 0 <= args.j <= X.m:
        raise UsageError(f"--j must lie in 0..{X.m}")
    pts = args.at or [[0.0] * args.j]
    for pt in pts:
        if len(pt) != args.j:
            raise UsageError(f"--at needs {args.j} coordinate(s), got {len(pt)}")
    res = conditional(X, args.driver, args.j, cfg)
    recs = []
    for pt in pts:
        v = res(*pt) if args.j else res()
        recs.append({"j": args.j, "at": list(pt), "value": float(np.asarray(v)), "driver": str(args.driver),
                     "payoff": X.label})
    em.records(recs)
    return EXIT_OK


def _contract_csv(path, trace, sign=1.0, header=("x", "psi")):
    if len(trace.axes) != 1:
        raise UsageError("contract CSV export supports one-axis contracts only")
    write_csv_columns(path, header, trace.axes[0].nodes, sign * trace.best_psi + 0.0)


def cmd_infconv(args, cfg, em):
    X = _payoff(args)
    kw, settings = _problem_kw(args)
    d3 = require_proper(args.d1, args.d2)
    try:
        p = InfConvProblem(args.d1, args.d2, X, cfg=cfg, settings=settings, **kw)
    except ValueError as e:
        raise UsageError(str(e)) from None
    target = evaluate(X, d3, disc=p.disc)
    tr = minimize(p, target=target)
    em.records(tr.records())
    summary = {**tr.summary(), "driver": str(d3), "d1": str(args.d1), "d2": str(args.d2), "payoff": X.label}
    if args.emit_contract:
        _contract_csv(args.emit_contract, tr)
        summary["contract_csv_path"] = str(args.emit_contract)
    em.summary(summary)
    if args.out:
        plotting.plot_traces([(X.label, tr.J_history, target)], plotting.sibling(args.out, "trace"))
        if len(tr.axes) == 1:
            plotting.plot_contract(tr.axes[0].nodes, tr.best_psi, plotting.sibling(args.out, "contract"))
    return EXIT_OK


def cmd_transfer(args, cfg, em):
    X = _payoff(args)
    kw, settings = _problem_kw(args)
    q = optimal_transfer(X, args.dA, args.dB, cfg, settings, **kw)
    rec = {**q.as_record(), "dA": str(args.dA), "dB": str(args.dB), "payoff": X.label, "contract_csv_path": None}
    path = args.contract_csv or (plotting.sibling(args.out, "contract").with_suffix(".csv") if args.out else None)
    if q.trace is not None and path is not None:
        _contract_csv(path, q.trace, sign=-1.0, header=("x", "F"))
        rec["contract_csv_path"] = str(path)
    em.records([rec])
    return EXIT_OK


def cmd_divergence(args, cfg, em):
    try:
        r = detect_divergence(args.d1, args.d2, args.t, args.lambdas, cfg)
    except GConvError as e:
        raise UsageError(str(e)) from None
    em.records([{**r.as_record(), "d1": str(args.d1), "d2": str(args.d2)}])
    if args.out:
        plotting.plot_divergence(r, plotting.sibling(args.out, "divergence"))
    return EXIT_OK


def cmd_verify(args, cfg, em):
    icfg = _config(args, INFCONV_CONFIG)
    rep = run_suite(args.suite, cfg, icfg)
    shown = [c for c in rep.checks if args.timings or "runtime" not in c.name]
    em.records([c.as_record() for c in shown])
    failed = [c for c in rep.checks if not c.passed]
    em.summary({"suite": args.suite, "pass": not failed, "checks": len(rep.checks), "failed": len(failed),
                "failed_checks": [f"{c.criterion}: {c.name}" for c in failed]})
    if args.out:
        plotting.report_figures(rep.artifacts, args.out)
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {
    "driver": cmd_driver,
    "expect": cmd_expect,
    "conditional": cmd_conditional,
    "infconv": cmd_infconv,
    "transfer": cmd_transfer,
    "divergence": cmd_divergence,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    base = INFCONV_CONFIG if args.cmd in ("infconv", "transfer") else SolveConfig()
    try:
        cfg = _config(args, base)
        em = Emitter(args.format, args.out, cfg.echo())
        code = COMMANDS[args.cmd](args, cfg, em)
    except UsageError as e:
        print(f"gconv {args.cmd}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except GConvError as e:
        print(f"gconv {args.cmd}: {e}", file=sys.stderr)
        return EXIT_FAIL
    em.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
