"""G-expectations of cylinder payoffs by backward recursion of G-heat solves.

For X = phi(B_t1 - B_t0, ..., B_tm - B_t(m-1)) the recursion runs on a tensor
grid of increments:

    psi_m = phi
    psi_j(x_1..x_j) = [G-heat solve of y -> psi_{j+1}(x_1..x_j, y) over t_{j+1} - t_j](y = 0)

and E[X] = psi_0.  All coordinates share one SpatialGrid, so psi_j is known
exactly at tensor nodes and only needs interpolation off-grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .drivers import Degenerate, Driver, Proper
from .errors import DegenerateConvolution, GridBudgetError
from .pde import (Envelope, GridFunction, SolveConfig, SpatialGrid, TimeStepping,
                  build_grid, march)

MAX_INCREMENTS = 3
MIN_TENSOR_POINTS = 21


@dataclass(frozen=True)
class CylinderPayoff:
    """phi applied to the increments of B between consecutive observation times.

    ``times`` holds t_1 < ... < t_m (t_0 = 0 is implicit); ``phi`` takes m
    array arguments and must broadcast.
    """

    times: tuple
    phi: Callable = field(compare=False)
    envelope: Envelope = Envelope(1.0, 1)
    label: str = ""

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times:
            raise ValueError("payoff needs at least one time point")
        if times[0] < 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"payoff times must be non-negative and strictly increasing, got {times}")
        if times[-1] <= 0:
            raise ValueError("payoff horizon must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "envelope", Envelope(float(self.envelope[0]), int(self.envelope[1])))

    @property
    def m(self) -> int:
        return len(self.times)

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def durations(self) -> tuple:
        return tuple(b - a for a, b in zip((0.0,) + self.times[:-1], self.times))

    def __call__(self, *increments):
        return self.phi(*increments)

    @classmethod
    def of_levels(cls, times, f: Callable, envelope=Envelope(1.0, 1), label=""):
        """Payoff given as a function of B_t1, ..., B_tm (absolute levels)."""

        def phi(*inc):
            return f(*np.cumsum(np.broadcast_arrays(*inc), axis=0))

        return cls(tuple(times), phi, envelope, label)

    @classmethod
    def constant(cls, c: float, times=(1.0,)):
        return cls(tuple(times), lambda *x: np.full(np.broadcast(*x).shape, float(c)), Envelope(0.0, 0), f"{c}")

    def _check_times(self, other: "CylinderPayoff"):
        if self.times != other.times:
            raise ValueError("payoffs must share time points to be combined")

    def __add__(self, other):
        if isinstance(other, CylinderPayoff):
            self._check_times(other)
            f, g = self.phi, other.phi
            env = Envelope(3.0 * (self.envelope.C + other.envelope.C),
                           max(self.envelope.m_growth, other.envelope.m_growth))
            return CylinderPayoff(self.times, lambda *x: f(*x) + g(*x), env, f"({self.label})+({other.label})")
        c = float(other)
        f = self.phi
        return CylinderPayoff(self.times, lambda *x: f(*x) + c, self.envelope, f"({self.label})+{c}")

    def __mul__(self, c):
        c = float(c)
        f = self.phi
        env = Envelope(abs(c) * self.envelope.C, self.envelope.m_growth)
        return CylinderPayoff(self.times, lambda *x: c * f(*x), env, f"{c}*({self.label})")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, CylinderPayoff) else -float(other))


@dataclass(frozen=True)
class Discretization:
    """One spatial grid shared by every increment coordinate plus the CFL reference volatility."""

    grid: SpatialGrid
    sigma_ref: float
    cfl_safety: float

    def steps(self, duration: float) -> TimeStepping:
        return TimeStepping.for_grid(self.grid.dx, self.sigma_ref, duration, self.cfl_safety)

    def echo(self) -> dict:
        return {"grid.x_max": self.grid.x_max, "grid.points_used": self.grid.n_points, "sigma_ref": self.sigma_ref}


def _tensor_work(n: int, half: float, durations, sigma: float, cfl: float) -> float:
    dx = 2 * half / (n - 1)
    total = 0.0
    for j, dur in enumerate(durations, start=1):
        total += n**j * TimeStepping.for_grid(dx, sigma, dur, cfl).n_steps
    return total


def discretize(X: CylinderPayoff, drivers: Sequence[Driver], cfg: SolveConfig | None = None) -> Discretization:
    """Grid for X under every driver in ``drivers`` (they share the time step).

    One increment uses cfg.n_points.  For m >= 2 the tensor recursion costs
    about n^m * steps node updates, so the per-axis resolution is the largest
    odd n <= cfg.n_points within cfg.work_budget.
    """
    cfg = cfg or SolveConfig()
    if X.m > MAX_INCREMENTS:
        raise GridBudgetError(f"payoffs with m={X.m} > {MAX_INCREMENTS} time points exceed the grid budget")
    sigma = max(d.sigma_hi for d in drivers)
    grid = build_grid(X.envelope, drivers, X.horizon, cfg)
    n = grid.n_points
    if X.m >= 2 and sigma > 0:
        while n >= MIN_TENSOR_POINTS and _tensor_work(n, grid.x_max, X.durations, sigma, cfg.cfl_safety) > cfg.work_budget:
            n = int(0.9 * n) | 1
        if n < MIN_TENSOR_POINTS:
            raise GridBudgetError(f"m={X.m} payoff does not fit the work budget {cfg.work_budget:g}")
        grid = SpatialGrid(grid.x_max, n)
    return Discretization(grid, sigma, cfg.cfl_safety)


def as_driver(d) -> Driver:
    if isinstance(d, Proper):
        return d.driver
    if isinstance(d, Degenerate):
        raise DegenerateConvolution("degenerate driver: the expectation is identically -inf")
    return d


def tensor_values(X: CylinderPayoff, grid: SpatialGrid) -> np.ndarray:
    axes = np.meshgrid(*([grid.nodes] * X.m), indexing="ij")
    vals = np.asarray(X.phi(*axes), dtype=float)
    return np.broadcast_to(vals, (grid.n_points,) * X.m).copy()


def backward(values: np.ndarray, durations: Sequence[float], d: Driver, disc: Discretization) -> np.ndarray:
    """Integrate out the trailing len(durations) axes, last increment first."""
    c = disc.grid.center
    for dur in reversed(tuple(durations)):
        values = march(values, d, disc.grid.dx, disc.steps(dur))[..., c]
    return values


def evaluate(X: CylinderPayoff, d, cfg: SolveConfig | None = None, disc: Discretization | None = None) -> float:
    """G-expectation E_d[X]."""
    d = as_driver(d)
    disc = disc or discretize(X, [d], cfg)
    return float(backward(tensor_values(X, disc.grid), X.durations, d, disc))


def evaluate_record(X: CylinderPayoff, d, cfg: SolveConfig | None = None) -> dict:
    """Value plus |value - value at half resolution| as a discretization error estimate."""
    cfg = cfg or SolveConfig()
    d = as_driver(d)
    disc = discretize(X, [d], cfg)
    value = evaluate(X, d, disc=disc)
    coarse = Discretization(SpatialGrid(disc.grid.x_max, (disc.grid.n_points - 1) // 2 + 1),
                            disc.sigma_ref, disc.cfl_safety)
    if coarse.grid.n_points % 2 == 0:
        coarse = Discretization(SpatialGrid(disc.grid.x_max, coarse.grid.n_points + 1), disc.sigma_ref, disc.cfl_safety)
    half = evaluate(X, d, disc=coarse)
    return {
        "value": value,
        "error_estimate": abs(value - half),
        "grid_config_echo": {**cfg.echo(), **disc.echo()},
    }


@dataclass
class ConditionalResult:
    """psi_j with E[X | H_tj] = psi_j(B_t1 - B_t0, ..., B_tj - B_t(j-1))."""

    j: int
    psi: Callable
    values: np.ndarray | None = None
    grid: SpatialGrid | None = None

    def __call__(self, *x):
        return self.psi(*x)


def conditional(X: CylinderPayoff, d, j: int, cfg: SolveConfig | None = None,
                disc: Discretization | None = None) -> ConditionalResult:
    if not 0 <= j <= X.m:
        raise ValueError(f"conditioning index must lie in [0, {X.m}], got {j}")
    d = as_driver(d)
    if j == X.m:
        return ConditionalResult(j, X.phi)
    disc = disc or discretize(X, [d], cfg)
    vals = backward(tensor_values(X, disc.grid), X.durations[j:], d, disc)
    nodes = disc.grid.nodes
    if j == 0:
        v = float(vals)
        return ConditionalResult(0, lambda *x: v, np.asarray(vals), disc.grid)
    if j == 1:
        gf = GridFunction(disc.grid, vals)
        return ConditionalResult(1, gf, vals, disc.grid)
    interp = RegularGridInterpolator((nodes,) * j, vals, method="linear", bounds_error=False, fill_value=None)

    def psi(*x):
        pts = np.stack(np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in x]), axis=-1)
        out = interp(pts)
        return float(out) if out.ndim == 0 else out

    return ConditionalResult(j, psi, vals, disc.grid)


def stationarity_check(phi: Callable, d, s: float, t: float, cfg: SolveConfig | None = None,
                       envelope: Envelope = Envelope(1.0, 1)) -> tuple:
    """(E[phi(B_t - B_s)], E[phi(B_{t-s})]) on one shared discretization."""
    if not 0 <= s < t:
        raise ValueError("need 0 <= s < t")
    d = as_driver(d)
    if s == 0:
        one = CylinderPayoff((t,), phi, envelope)
        v = evaluate(one, d, cfg)
        return v, v
    two = CylinderPayoff((s, t), lambda x1, x2: phi(x2) + 0.0 * x1, envelope)
    disc = discretize(two, [d], cfg)
    one = CylinderPayoff((t - s,), phi, envelope)
    return evaluate(two, d, disc=disc), evaluate(one, d, disc=disc)
