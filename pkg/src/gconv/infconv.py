"""Inf-convolution of two G-expectations.

    (E_1 [] E_2)[X] = inf_F  E_1[X - F] + E_2[F]

The infimum runs over contracts F = psi(B_t1 - B_t0, ..., B_tc - B_t(c-1)), where
psi is piecewise linear on a small control grid.  J is convex in psi, so plain
coordinate descent finds the infimum over that family.  Both terms are
evaluated on one Discretization whose time step is set by the larger sigma_hi.
This keeps J >= E_3[X] exact at the discrete level, with E_3 using the
intersected driver.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .drivers import Degenerate, Driver, Proper, convolve_drivers
from .errors import DegenerateConvolution, GConvError
from .expectation import (CylinderPayoff, Discretization, backward, discretize, evaluate,
                          tensor_values)
from .pde import Envelope, SolveConfig, build_grid

# J needs many solves, so the default grid is coarser than the single-solve one
INFCONV_CONFIG = SolveConfig(n_points=401, work_budget=2e7)
TOL_THEOREM = 5e-3
TOL_LOWER = 2e-3


@dataclass(frozen=True)
class OptimizerSettings:
    max_iters: int = 500        # coordinate updates
    tol: float = 1e-5           # stop once a full sweep improves J by less than this
    fd_step: float = 1e-3
    initial_step: float = 0.5
    halvings: int = 8


@dataclass(frozen=True)
class ControlGrid:
    """Nodes of one contract axis; psi is linear between them and continued linearly outside."""

    nodes: np.ndarray = field(compare=False)

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0):
            raise ValueError("control nodes must be strictly increasing with at least 3 points")
        if not np.any(x == 0.0):
            raise ValueError("control grid must contain 0 (gauge node)")
        object.__setattr__(self, "nodes", x)

    @classmethod
    def stretched(cls, half_width: float, n: int, stretch: float = 2.0):
        """n odd; spacing grows away from 0 (sinh map), uniform when stretch -> 0."""
        if n < 3 or n % 2 == 0:
            raise ValueError("control grid needs an odd number of points >= 3")
        s = np.linspace(-1.0, 1.0, n)
        x = half_width * (np.sinh(stretch * s) / math.sinh(stretch) if stretch > 0 else s)
        x[n // 2] = 0.0
        return cls(x)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def zero(self) -> int:
        return int(np.flatnonzero(self.nodes == 0.0)[0])

    def weights(self, x: np.ndarray) -> np.ndarray:
        """Matrix W with W @ psi = psi evaluated at x."""
        c = self.nodes
        i = np.clip(np.searchsorted(c, x, side="right") - 1, 0, c.size - 2)
        th = (x - c[i]) / (c[i + 1] - c[i])
        W = np.zeros((x.size, c.size))
        rows = np.arange(x.size)
        W[rows, i] = 1.0 - th
        W[rows, i + 1] = th
        return W

    def __call__(self, psi: np.ndarray, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (self.weights(x.ravel()) @ psi).reshape(x.shape)


@dataclass
class InfConvProblem:
    """J(psi) = E_d1[X - psi(x_1..x_c)] + E_d2[psi(x_1..x_c)] with c = contract_index."""

    d1: Driver
    d2: Driver
    X: CylinderPayoff
    contract_index: int | None = None
    n_ctrl: int | None = None
    ctrl_width: float = 4.5
    ctrl_stretch: float = 2.0
    cfg: SolveConfig = INFCONV_CONFIG
    settings: OptimizerSettings = OptimizerSettings()

    def __post_init__(self):
        for d in (self.d1, self.d2):
            if not isinstance(d, Driver):
                raise TypeError("InfConvProblem needs two Driver instances")
        c = self.contract_index or self.X.m
        if not 1 <= c <= self.X.m:
            raise ValueError(f"contract time index must lie in 1..{self.X.m}, got {c}")
        if c > 2:
            raise ValueError("contracts on more than two increments are not supported")
        self.contract_index = c
        if self.n_ctrl is None:
            self.n_ctrl = 41 if c == 1 else 9
        sig = max(self.d1.sigma_hi, self.d2.sigma_hi)
        self.disc: Discretization = discretize(self.X, [self.d1, self.d2], self.cfg)
        grid = self.disc.grid
        self.axes = []
        for dur in self.X.durations[:c]:
            w = self.ctrl_width * max(sig, 1e-12) * math.sqrt(dur)
            w = min(w, 0.75 * grid.x_max)
            self.axes.append(ControlGrid.stretched(w, self.n_ctrl, self.ctrl_stretch))
        self._W = [a.weights(grid.nodes) for a in self.axes]
        self._phi = tensor_values(self.X, grid)

    @property
    def m(self) -> int:
        return self.X.m

    @property
    def ctrl_shape(self) -> tuple:
        return tuple(a.n for a in self.axes)

    @property
    def gauge_index(self) -> tuple:
        return tuple(a.zero for a in self.axes)

    def contract_on_grid(self, ctrl: np.ndarray) -> np.ndarray:
        """Control values (..., *ctrl_shape) -> nodal values (..., n, [n])."""
        if self.contract_index == 1:
            return ctrl @ self._W[0].T
        return np.einsum("ia,...ab,jb->...ij", self._W[0], ctrl, self._W[1])

    def J_batch(self, ctrl: np.ndarray) -> np.ndarray:
        """J for a batch of control arrays of shape (R, *ctrl_shape)."""
        ctrl = np.asarray(ctrl, dtype=float)
        F = self.contract_on_grid(ctrl)
        return self.J_nodal(F)

    def J_nodal(self, F: np.ndarray) -> np.ndarray:
        """J for nodal contracts of shape (R, n, [n]) over the first c increments."""
        c, m = self.contract_index, self.m
        F = np.asarray(F, dtype=float)
        Fx = F.reshape(F.shape + (1,) * (m - c))
        durs = self.X.durations
        first = backward(self._phi[None, ...] - Fx, durs, self.d1, self.disc)
        second = backward(F, durs[:c], self.d2, self.disc)
        return first + second

    def sample_contract(self, psi: Callable) -> np.ndarray:
        """Control values of a callable psi(x_1, ..., x_c)."""
        mesh = np.meshgrid(*[a.nodes for a in self.axes], indexing="ij")
        return np.broadcast_to(np.asarray(psi(*mesh), dtype=float), self.ctrl_shape).copy()

    def gauged(self, ctrl: np.ndarray) -> np.ndarray:
        return ctrl - ctrl[(...,) + self.gauge_index][(...,) + (None,) * self.contract_index]


def functional_J(p: InfConvProblem, psi) -> float:
    """E_d1[X - psi] + E_d2[psi] with psi a GridFunction, a callable, or control values."""
    grid = p.disc.grid
    if isinstance(psi, np.ndarray):
        if psi.shape != p.ctrl_shape:
            raise ValueError(f"control array must have shape {p.ctrl_shape}")
        return float(p.J_batch(psi[None])[0])
    mesh = np.meshgrid(*([grid.nodes] * p.contract_index), indexing="ij")
    F = np.broadcast_to(np.asarray(psi(*mesh), dtype=float), (grid.n_points,) * p.contract_index)
    if not np.all(np.isfinite(F)):
        raise ValueError("contract values must be finite")
    return float(p.J_nodal(F[None])[0])


@dataclass
class OptimizerTrace:
    iterations: int
    J_history: list
    best_psi: np.ndarray
    best_J: float
    axes: list
    start: str
    start_values: dict
    evaluations: int
    min_J_visited: float
    converged: bool
    target: float | None = None

    @property
    def gap(self) -> float | None:
        return None if self.target is None else self.best_J - self.target

    def contract(self) -> Callable:
        """Best psi as a function of the contract increments."""
        if len(self.axes) == 1:
            a, v = self.axes[0], self.best_psi
            return lambda x: a(v, x)
        a, b = self.axes
        v = self.best_psi

        def psi(x1, x2):
            x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
            W1, W2 = a.weights(x1.ravel()), b.weights(x2.ravel())
            return np.einsum("ka,ab,kb->k", W1, v, W2).reshape(x1.shape)

        return psi

    def records(self) -> list:
        """One row per accepted step: iter, J, gap."""
        out = []
        for k, J in enumerate(self.J_history):
            out.append({"iter": k, "J": J, "gap": None if self.target is None else J - self.target})
        return out

    def summary(self) -> dict:
        return {
            "best_J": self.best_J,
            "target": self.target,
            "gap": self.gap,
            "iterations": self.iterations,
            "accepted_steps": len(self.J_history) - 1,
            "evaluations": self.evaluations,
            "min_J_visited": self.min_J_visited,
            "start": self.start,
            "converged": self.converged,
        }


def require_proper(d1: Driver, d2: Driver):
    conv = convolve_drivers(d1, d2)
    if isinstance(conv, Degenerate):
        raise DegenerateConvolution(
            f"degenerate: value is -inf since {d1} and {d2} are disjoint; use detect_divergence")
    return conv.driver


def warm_starts(p: InfConvProblem) -> dict:
    zero = np.zeros(p.ctrl_shape)
    starts = {"zero": zero}
    if p.contract_index == p.m:
        phi = p.gauged(p.sample_contract(p.X.phi))
        starts["phi"] = phi
        starts["half_phi"] = 0.5 * phi
    return starts


def _hat(n: int, i: int, half: int) -> np.ndarray:
    k = np.arange(n)
    return np.clip(1.0 - np.abs(k - i) / half, 0.0, None)


def descent_directions(p: InfConvProblem, levels: int) -> list:
    """Unit coordinates first, then hat functions of half-width 2, 4, ... control cells.

    Coordinate descent alone can stall at a kink of J that is not aligned with
    the axes; the coarser hats move whole blocks of nodes together.  Every
    direction vanishes at the gauge node.
    """
    dirs = []
    g = p.gauge_index
    for lev in range(levels + 1):
        half = 2**lev
        per_axis = []
        for a, z in zip(p.axes, g):
            centers = sorted(set(range(z % half, a.n, half)))
            per_axis.append([_hat(a.n, i, half) if lev else np.eye(a.n)[i] for i in centers])
        for combo in itertools.product(*per_axis):
            D = combo[0] if len(combo) == 1 else np.multiply.outer(*combo)
            if D[g] != 0.0:
                # a hat on the gauge node: hat - 1 gives the same J up to a constant shift
                D = D - D[g]
            if np.any(D != 0.0):
                dirs.append(D / np.abs(D).max())
    return dirs


def minimize(p: InfConvProblem, target: float | None = None, callback=None) -> OptimizerTrace:
    """Multi-start followed by coordinate descent on the control values.

    Each update probes J at psi +- h D along one direction D, moves against
    the central difference, and backtracks from that direction's current step
    length.  The line-search candidates of one update go through a single
    batched march.  Unit directions are swept first; the multiscale ones only
    once a unit sweep stalls.
    """
    require_proper(p.d1, p.d2)
    st = p.settings
    starts = warm_starts(p)
    names = list(starts)
    vals = p.J_batch(np.stack([starts[k] for k in names]))
    evals = len(names)
    min_seen = float(vals.min())
    k0 = int(np.argmin(vals))
    psi = starts[names[k0]].copy()
    J = float(vals[k0])
    history = [J]

    levels = int(math.log2(max(p.ctrl_shape) - 1)) - 1
    dirs = descent_directions(p, levels)
    n_unit = sum(1 for D in dirs if np.count_nonzero(D) == 1)
    step = np.full(len(dirs), st.initial_step)
    h = st.fd_step
    fracs = 0.5 ** np.arange(st.halvings)
    iters = 0
    converged = False
    use = n_unit
    while iters < st.max_iters:
        J_sweep = J
        for j in range(use):
            if iters >= st.max_iters:
                break
            iters += 1
            D = dirs[j]
            # probes and both signs of the backtracking ladder in one march
            lengths = np.concatenate([[h, -h], step[j] * fracs, -step[j] * fracs])
            rows = p.J_batch(psi[None] + lengths.reshape((-1,) + (1,) * psi.ndim) * D[None])
            evals += rows.size
            min_seen = min(min_seen, float(rows.min()))
            g = (rows[0] - rows[1]) / (2 * h)
            if g == 0.0:
                continue
            nf = fracs.size
            sel = slice(2, 2 + nf) if g < 0 else slice(2 + nf, 2 + 2 * nf)
            lengths, cj = lengths[sel], rows[sel]
            ok = np.flatnonzero(cj < J - 1e-4 * np.abs(lengths) * abs(g))
            if ok.size:
                k = int(ok[0])
            else:
                k = int(np.argmin(cj))
                if not cj[k] < J:
                    step[j] *= 0.25
                    continue
            psi = psi + lengths[k] * D
            J = float(cj[k])
            history.append(J)
            # grow after a full-length step, otherwise continue from the accepted length
            step[j] = step[j] * fracs[k] * (2.0 if k == 0 else 1.0)
            if callback:
                callback(iters, J)
        if J_sweep - J < st.tol:
            if use == len(dirs):
                converged = True
                break
            use = len(dirs)

    return OptimizerTrace(
        iterations=iters, J_history=history, best_psi=psi, best_J=J, axes=list(p.axes),
        start=names[k0], start_values={k: float(v) for k, v in zip(names, vals)},
        evaluations=evals, min_J_visited=min_seen, converged=converged, target=target,
    )


@dataclass
class DivergenceReport:
    slope: float
    theoretical_slope: float
    lambdas: list
    values: list
    swapped: bool
    t: float

    @property
    def rel_error(self) -> float:
        return abs(self.slope - self.theoretical_slope) / abs(self.theoretical_slope)

    def as_record(self) -> dict:
        return {
            "slope": self.slope,
            "theoretical_slope": self.theoretical_slope,
            "rel_error": self.rel_error,
            "lambdas": self.lambdas,
            "values": self.values,
            "swapped": self.swapped,
            "t": self.t,
        }


def detect_divergence(d1: Driver, d2: Driver, t: float, lambda_grid: Sequence[float] = (1, 2, 4, 8),
                      cfg: SolveConfig | None = None) -> DivergenceReport:
    """Slope in lambda of J(-lambda B_t^2) for X = 0; tends to -inf when the intervals are disjoint."""
    conv = convolve_drivers(d1, d2)
    if isinstance(conv, Proper):
        raise GConvError(f"{d1} and {d2} intersect in {conv.driver}; the inf-convolution is finite")
    swapped = False
    if d1.sigma_hi >= d2.sigma_lo:
        d1, d2, swapped = d2, d1, True
    cfg = cfg or SolveConfig()
    lambdas = [float(l) for l in lambda_grid]
    grid = build_grid(Envelope(1.0, 1), [d1, d2], t, cfg)
    disc = Discretization(grid, max(d1.sigma_hi, d2.sigma_hi), cfg.cfl_safety)
    x2 = grid.nodes**2
    F = -np.array(lambdas)[:, None] * x2[None, :]
    J = backward(0.0 - F, (t,), d1, disc) + backward(F, (t,), d2, disc)
    values = [float(v) for v in J]
    slope = float(np.polyfit(lambdas, values, 1)[0]) if len(lambdas) >= 2 else float("nan")
    return DivergenceReport(slope, (d1.sigma_hi**2 - d2.sigma_lo**2) * t, lambdas, values, swapped, float(t))


@dataclass
class TheoremReport:
    target: float
    achieved: float
    tol: float
    tol_lower: float
    min_J_visited: float
    driver: Driver
    trace: OptimizerTrace = field(repr=False)

    @property
    def gap(self) -> float:
        return self.achieved - self.target

    @property
    def lower_ok(self) -> bool:
        return self.min_J_visited >= self.target - self.tol_lower

    @property
    def passed(self) -> bool:
        return abs(self.gap) <= self.tol and self.lower_ok

    def as_record(self) -> dict:
        return {
            "target": self.target,
            "achieved": self.achieved,
            "gap": self.gap,
            "tol": self.tol,
            "tol_lower": self.tol_lower,
            "min_J_visited": self.min_J_visited,
            "lower_ok": self.lower_ok,
            "pass": self.passed,
            "driver": str(self.driver),
        }


def verify_theorem(X: CylinderPayoff, d1: Driver, d2: Driver, cfg: SolveConfig | None = None,
                   settings: OptimizerSettings | None = None, tol_theorem: float = TOL_THEOREM,
                   tol_lower: float = TOL_LOWER, **problem_kw) -> TheoremReport:
    """Best J against E_{d1 [] d2}[X], both on one discretization."""
    d3 = require_proper(d1, d2)
    p = InfConvProblem(d1, d2, X, cfg=cfg or INFCONV_CONFIG, settings=settings or OptimizerSettings(), **problem_kw)
    target = evaluate(X, d3, disc=p.disc)
    trace = minimize(p, target=target)
    scale = max(1.0, abs(target))
    return TheoremReport(target, trace.best_J, tol_theorem * scale, tol_lower * scale,
                         trace.min_J_visited, d3, trace)


@dataclass
class ChainReport:
    """Left-associated pairwise inf-convolutions for every ordering of the drivers."""

    orders: list
    drivers: list                  # final driver per ordering, or None when degenerate
    values: list                   # final achieved value per ordering
    stages: list                   # TheoremReports per ordering
    degenerate: bool = False
    degenerate_stage: int | None = None

    @property
    def driver_invariant(self) -> bool:
        return all(d == self.drivers[0] for d in self.drivers)

    @property
    def value_spread(self) -> float:
        return max(self.values) - min(self.values) if self.values else float("nan")

    def as_record(self) -> dict:
        return {
            "degenerate": self.degenerate,
            "degenerate_stage": self.degenerate_stage,
            "drivers": [None if d is None else str(d) for d in self.drivers],
            "values": self.values,
            "driver_invariant": self.driver_invariant,
            "value_spread": self.value_spread,
        }


def convolve_n_expectations(drivers: Sequence[Driver], X: CylinderPayoff, cfg: SolveConfig | None = None,
                            settings: OptimizerSettings | None = None, all_orders: bool = True) -> ChainReport:
    """(((E_1 [] E_2) [] E_3) ...)[X] stage by stage, for each ordering of ``drivers``."""
    drivers = list(drivers)
    if len(drivers) < 2:
        raise ValueError("need at least two drivers")
    orders = list(itertools.permutations(range(len(drivers)))) if all_orders else [tuple(range(len(drivers)))]
    rep = ChainReport([], [], [], [])
    seen = {}   # orderings share stages, e.g. (d1 [] d2) [] d3 and (d2 [] d1) [] d3 end alike
    for order in orders:
        acc = drivers[order[0]]
        stages = []
        for k, i in enumerate(order[1:], start=1):
            conv = convolve_drivers(acc, drivers[i])
            if isinstance(conv, Degenerate):
                # the driver algebra is order independent, so one degenerate stage settles it
                return ChainReport([order], [None], [float("-inf")], [stages], True, k)
            key = (acc, drivers[i])
            if key not in seen:
                seen[key] = verify_theorem(X, acc, drivers[i], cfg, settings)
            stages.append(seen[key])
            acc = conv.driver
        rep.orders.append(order)
        rep.drivers.append(acc)
        rep.values.append(stages[-1].achieved)
        rep.stages.append(stages)
    return rep
