"""Numerical checks of the engine against closed forms, oracles and structural identities.

Each criterion function returns a list of Check records; suites group them.
Data needed for figures (convergence errors, optimizer traces, the divergence
fit) is collected on the side in ``Report.artifacts``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import Driver, convolve_drivers
from .expectation import CylinderPayoff, conditional, discretize, evaluate
from .infconv import (INFCONV_CONFIG, TOL_THEOREM, InfConvProblem, OptimizerSettings,
                      convolve_n_expectations, detect_divergence, functional_J, verify_theorem)
from .lattice import evaluate_lattice
from .pde import Envelope, GridFunction, SolveConfig, build_grid, gaussian_oracle, solve
from .payoff_dsl import to_payoff


@dataclass
class Check:
    criterion: int
    name: str
    measured: float
    target: float
    tolerance: float
    passed: bool
    note: str = ""

    def as_record(self) -> dict:
        return {
            "criterion": self.criterion,
            "check": self.name,
            "measured": self.measured,
            "target": self.target,
            "tolerance": self.tolerance,
            "pass": bool(self.passed),
            "note": self.note,
        }


@dataclass
class Report:
    checks: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def by_criterion(self) -> dict:
        out = {}
        for c in self.checks:
            out.setdefault(c.criterion, []).append(c)
        return out


def _abs_check(k, name, measured, target, tol, note=""):
    return Check(k, name, measured, target, tol, abs(measured - target) <= tol, note)


def _rel_check(k, name, measured, target, rel, note=""):
    tol = rel * max(1.0, abs(target))
    return Check(k, name, measured, target, tol, abs(measured - target) <= tol, note)


def _payoff(f, env, t=1.0, label=""):
    return CylinderPayoff((t,), f, env, label)


D12 = Driver(1.0, 2.0)

# the desk suite: (label, phi, envelope, convex?, kinks)
DESK = [
    ("x^2", lambda x: x * x, Envelope(1.0, 1), True, ()),
    ("-x^2", lambda x: -x * x, Envelope(1.0, 1), False, ()),
    ("|x|^3", lambda x: np.abs(x) ** 3, Envelope(3.0, 2), True, (0.0,)),
    ("max(x-1,0)", lambda x: np.maximum(x - 1.0, 0.0), Envelope(1.0, 0), True, (1.0,)),
    ("sin(x)", np.sin, Envelope(1.0, 0), None, ()),
]

# convex/concave payoffs with a classical Gaussian answer
ORACLE_SUITE = [
    ("x^2", lambda x: x * x, Envelope(1.0, 1), True, ()),
    ("max(x,0)", lambda x: np.maximum(x, 0.0), Envelope(1.0, 0), True, (0.0,)),
    ("max(x-1,0)", lambda x: np.maximum(x - 1.0, 0.0), Envelope(1.0, 0), True, (1.0,)),
    ("-x^2", lambda x: -x * x, Envelope(1.0, 1), False, ()),
    ("-|x|", lambda x: -np.abs(x), Envelope(1.0, 0), False, (0.0,)),
]

THEOREM_SUITE = [
    ("B1^2", lambda x: x * x, Envelope(1.0, 1)),
    ("-B1^2", lambda x: -x * x, Envelope(1.0, 1)),
    ("sin(B1)", np.sin, Envelope(1.0, 0)),
    ("sin(B1)+0.3*B1^2", lambda x: np.sin(x) + 0.3 * x * x, Envelope(1.6, 1)),
    ("max(B1-1,0)", lambda x: np.maximum(x - 1.0, 0.0), Envelope(1.0, 0)),
]


# -- 1: moments ------------------------------------------------------------------


def check_moments(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    out = []
    E = lambda f, env, t=1.0: evaluate(_payoff(f, env, t), D12, cfg)
    out.append(_abs_check(1, "E[B_1]", E(lambda x: x, Envelope(1.0, 0)), 0.0, 1e-4))
    out.append(_abs_check(1, "E[-B_1]", E(lambda x: -x, Envelope(1.0, 0)), 0.0, 1e-4))
    out.append(_rel_check(1, "E[B_1^2]", E(lambda x: x * x, Envelope(1.0, 1)), 4.0, 1e-3))
    out.append(_rel_check(1, "E[-B_1^2]", E(lambda x: -x * x, Envelope(1.0, 1)), -1.0, 1e-3))
    w3 = gaussian_oracle(lambda z: np.abs(z) ** 3, 1.0, 1.0, q=cfg.quad_order, breakpoints=(0.0,))
    cube = lambda x: np.abs(x) ** 3
    m3 = {t: E(cube, Envelope(3.0, 2), t) for t in (0.25, 0.5, 1.0)}
    out.append(_rel_check(1, "E[|B_1|^3] vs 8 E|W_1|^3", m3[1.0], 8.0 * w3, 1e-2))
    ratios = {t: v / t**1.5 for t, v in m3.items()}
    spread = max(abs(r / ratios[1.0] - 1.0) for r in ratios.values())
    out.append(Check(1, "E[|B_t|^3]/t^1.5 constant over t", spread, 0.0, 1e-2, spread <= 1e-2,
                     " ".join(f"t={t}:{r:.6f}" for t, r in ratios.items())))
    elapsed = time.perf_counter() - t0
    out.append(Check(1, "moment suite runtime [s]", elapsed, 0.0, 60.0, elapsed <= 60.0))
    return out


# -- 2 and 10: convex/concave oracle and grid convergence ----------------------------


def _oracle_error(f, env, convex, kinks, cfg):
    grid = build_grid(env, [D12], 1.0, cfg)
    u0 = solve(D12, GridFunction.sample(grid, f), 1.0, cfg).at_zero()
    sigma = D12.sigma_hi if convex else D12.sigma_lo
    ref = gaussian_oracle(f, sigma, 1.0, q=cfg.quad_order, breakpoints=kinks or None)
    return u0, ref, grid


def check_oracle(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    cfg = cfg or SolveConfig()
    out = []
    for label, f, env, convex, kinks in ORACLE_SUITE:
        u0, ref, _ = _oracle_error(f, env, convex, kinks, cfg)
        out.append(_rel_check(2, f"solve vs gaussian oracle: {label}", u0, ref, 1e-3,
                              "sigma_hi" if convex else "sigma_lo"))
    return out


# errors this small sit at the rounding floor; halving dx cannot shrink them further
EXACT_FLOOR = 1e-10


def check_convergence(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    cfg = cfg or SolveConfig()
    fine = cfg.refined()
    out = []
    data = []
    for label, f, env, convex, kinks in ORACLE_SUITE:
        u_c, ref, g_c = _oracle_error(f, env, convex, kinks, cfg)
        u_f, _, g_f = _oracle_error(f, env, convex, kinks, fine)
        e_c, e_f = abs(u_c - ref), abs(u_f - ref)
        scale = max(1.0, abs(ref))
        if e_c <= EXACT_FLOOR * scale:
            ratio, ok, note = float("inf"), e_f <= EXACT_FLOOR * scale, "exact at both resolutions"
        else:
            ratio = e_c / e_f if e_f > 0 else float("inf")
            ok, note = ratio >= 2.0, f"observed order {math.log2(ratio):.2f}" if ratio < float("inf") else ""
        out.append(Check(10, f"error ratio at dx/2: {label}", ratio, 2.0, 0.0, ok,
                         f"err(dx)={e_c:.3e} err(dx/2)={e_f:.3e} {note}".strip()))
        data.append((label, [g_c.dx, g_f.dx], [e_c, e_f]))
    if report is not None:
        report.artifacts["convergence"] = data
    return out


# -- 3 and 4: axioms and semigroup ------------------------------------------------


AXIOM_CONFIG = SolveConfig(n_points=401, work_budget=2e7)


def check_axioms(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    cfg = cfg or AXIOM_CONFIG
    times = (0.5, 1.0)
    X = to_payoff("max(x1+x2-1,0)-0.5*abs(x1)", times)
    Y = to_payoff("sin(x1+x2)+0.2*x2*x2", times)
    Z = to_payoff("max(max(x1+x2-1,0)-0.5*abs(x1), sin(x1+x2)+0.2*x2*x2)", times)
    disc = discretize(X + Y, [D12], cfg)
    E = lambda P: evaluate(P, D12, disc=disc)
    eX, eY, eZ = E(X), E(Y), E(Z)
    c = 0.75
    out = []
    out.append(Check(3, "monotonicity E[X] <= E[max(X,Y)]", eX - eZ, 0.0, 1e-9, eX <= eZ + 1e-9))
    ec = E(CylinderPayoff.constant(c, times))
    out.append(_abs_check(3, "constants E[c] = c", ec, c, 1e-9))
    eXY = E(X + Y)
    out.append(Check(3, "subadditivity E[X+Y] <= E[X]+E[Y]", eXY - eX - eY, 0.0, 1e-9, eXY <= eX + eY + 1e-9))
    for lam in (2.0, 4.0):
        out.append(_rel_check(3, f"homogeneity E[{lam:g}X] = {lam:g}E[X]", E(lam * X), lam * eX, 1e-9))
    out.append(_rel_check(3, "cash translation E[X+c] = E[X]+c", E(X + c), eX + c, 1e-9))
    psi1 = conditional(X, D12, 1, disc=disc)
    tower = evaluate(CylinderPayoff((times[0],), psi1.psi, X.envelope), D12, disc=disc)
    out.append(_abs_check(3, "tower E[E[X|H_t1]] = E[X]", tower, eX, 1e-6))
    return out


def check_semigroup(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    cfg = cfg or SolveConfig()
    grid = build_grid(Envelope(1.0, 1), [D12], 1.0, cfg)
    phi = GridFunction.sample(grid, lambda x: x * x)
    direct = solve(D12, phi, 1.0, cfg)
    chained = solve(D12, solve(D12, phi, 0.5, cfg), 0.5, cfg)
    inner = np.abs(grid.nodes) <= 0.5 * grid.x_max
    err = float(np.max(np.abs(direct.values - chained.values)[inner]))
    return [Check(4, "semigroup x^2, t=s=0.5 (interior sup)", err, 0.0, 1e-6, err <= 1e-6)]


# -- 5: lattice oracle --------------------------------------------------------------


def check_lattice(cfg: SolveConfig | None = None, report: Report | None = None, steps: int = 512) -> list:
    cfg = cfg or SolveConfig()
    out = []
    for label, f, env, _, _ in DESK:
        X = _payoff(f, env)
        pde = evaluate(X, D12, cfg)
        lat = evaluate_lattice(X, D12, steps).value
        out.append(_rel_check(5, f"PDE vs lattice ({steps} steps): {label}", pde, lat, 1e-2))
    return out


# -- 6 and 7: inf-convolution theorem ---------------------------------------------


def check_theorem(cfg: SolveConfig | None = None, report: Report | None = None,
                  settings: OptimizerSettings | None = None) -> list:
    cfg = cfg or INFCONV_CONFIG
    d1, d2 = Driver(1.0, 2.0), Driver(1.5, 3.0)
    t0 = time.perf_counter()
    out = []
    traces = []
    for label, f, env in THEOREM_SUITE:
        r = verify_theorem(_payoff(f, env), d1, d2, cfg, settings)
        out.append(Check(6, f"gap {label}", r.achieved, r.target, r.tol, abs(r.gap) <= r.tol,
                         f"gap={r.gap:.3e} driver={r.driver} iters={r.trace.iterations}"))
        out.append(Check(6, f"lower bound {label}", r.min_J_visited, r.target - r.tol_lower, 0.0, r.lower_ok,
                         "min J over every visited contract"))
        traces.append((label, r.trace.J_history, r.target))
    elapsed = time.perf_counter() - t0
    out.append(Check(6, "theorem suite runtime [s]", elapsed, 0.0, 600.0, elapsed <= 600.0))
    if report is not None:
        report.artifacts["traces"] = traces
    return out


def check_nested(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    cfg = cfg or INFCONV_CONFIG
    d1, d2 = Driver(1.0, 2.0), Driver(0.5, 3.0)
    d3 = convolve_drivers(d1, d2).driver
    out = []
    for label, f, env in THEOREM_SUITE:
        p = InfConvProblem(d1, d2, _payoff(f, env), cfg=cfg)
        J0 = functional_J(p, lambda x: np.zeros_like(x))
        target = evaluate(p.X, d3, disc=p.disc)
        out.append(_rel_check(7, f"psi=0 attains target: {label}", J0, target, TOL_THEOREM,
                              f"convolved driver {d3}"))
    return out


# -- 8: divergence ------------------------------------------------------------------


def check_divergence(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    d1, d2 = Driver(1.0, 1.5), Driver(2.0, 3.0)
    out = []
    for t, slope in ((1.0, -1.75), (0.5, -0.875)):
        r = detect_divergence(d1, d2, t, (1, 2, 4, 8), cfg)
        out.append(Check(8, f"lambda-slope of J(-lambda B_t^2), t={t:g}", r.slope, slope, 0.02 * abs(slope),
                         r.rel_error <= 0.02))
        if report is not None and t == 1.0:
            report.artifacts["divergence"] = r
    r0 = detect_divergence(d1, d2, 1.0, (0.0,), cfg)
    out.append(_abs_check(8, "J at lambda=0", r0.values[0], 0.0, 1e-6))
    return out


# -- 9: n-fold convolution ----------------------------------------------------------


def check_corollary(cfg: SolveConfig | None = None, report: Report | None = None) -> list:
    drivers = [Driver(1.0, 3.0), Driver(2.0, 4.0), Driver(0.0, 2.5)]
    X = _payoff(lambda x: x * x, Envelope(1.0, 1))
    r = convolve_n_expectations(drivers, X, cfg)
    tol = 5e-3 * 6.25
    v = r.values[0]
    out = [Check(9, "final value, given order", v, 6.25, tol, abs(v - 6.25) <= tol, f"driver {r.drivers[0]}")]
    out.append(Check(9, "target driver identical over all orderings", float(not r.driver_invariant), 0.0, 0.0,
                     r.driver_invariant, " ".join(str(d) for d in r.drivers)))
    out.append(Check(9, "achieved-value spread over orderings", r.value_spread, 0.0, 1e-2, r.value_spread <= 1e-2))
    deg = convolve_n_expectations([Driver(0.0, 1.0), Driver(2.0, 3.0)], X, cfg)
    out.append(Check(9, "disjoint pair is degenerate", float(deg.degenerate), 1.0, 0.0, deg.degenerate))
    return out


SUITES: dict[str, list[Callable]] = {
    "moments": [check_moments, check_oracle, check_lattice, check_convergence],
    "axioms": [check_axioms, check_semigroup],
    "theorem": [check_theorem, check_nested],
    "divergence": [check_divergence],
    "corollary": [check_corollary],
}
SUITES["all"] = [f for k in ("moments", "axioms", "theorem", "divergence", "corollary") for f in SUITES[k]]


def run_suite(name: str, cfg: SolveConfig | None = None, infconv_cfg: SolveConfig | None = None) -> Report:
    """Run a named suite.  ``cfg`` drives single solves, ``infconv_cfg`` the optimizer problems."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    rep = Report()
    for fn in SUITES[name]:
        c = infconv_cfg if fn in (check_theorem, check_nested, check_corollary) else cfg
        if fn is check_axioms:
            c = None
        rep.checks.extend(fn(c, rep))
    return rep
