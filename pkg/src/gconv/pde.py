"""Explicit monotone finite differences for the G-heat equation u_t = G(u_xx).

The scheme is

    u[n+1, j] = u[n, j] + dt * G((u[n, j+1] - 2 u[n, j] + u[n, j-1]) / dx**2)

with the second difference frozen to zero at the two boundary nodes (linear
continuation).  Under dt <= cfl * dx**2 / sigma_hi**2 every coefficient is
non-negative, so the update is monotone and converges to the viscosity
solution.  A Gauss quadrature oracle covers the convex/concave cases where the
G-expectation collapses to a classical Gaussian expectation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .drivers import Driver
from .errors import CFLViolation, GridBudgetError, NonFiniteSolution

DEFAULT_K = 8.0
DEFAULT_N_POINTS = 1601
CFL_SAFETY = 0.9
DEFAULT_QUAD_ORDER = 64
MAX_STEPS = 10**7
TAIL_TOL = 1e-6
MAX_DOUBLINGS = 4


@dataclass(frozen=True)
class SolveConfig:
    k: float = DEFAULT_K
    n_points: int = DEFAULT_N_POINTS
    cfl_safety: float = CFL_SAFETY
    quad_order: int = DEFAULT_QUAD_ORDER
    # per-solve node-update budget for tensor-grid recursions (m >= 2)
    work_budget: float = 1e8

    def __post_init__(self):
        if self.k < 4:
            raise ValueError(f"grid.k must be >= 4, got {self.k}")
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError(f"grid.n_points must be odd and >= 3, got {self.n_points}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"grid.cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.quad_order < 16:
            raise ValueError(f"quad.order must be >= 16, got {self.quad_order}")

    def halved(self) -> "SolveConfig":
        """Same domain at half the spatial resolution."""
        return replace(self, n_points=(self.n_points - 1) // 2 + 1)

    def refined(self) -> "SolveConfig":
        """Same domain with dx halved."""
        return replace(self, n_points=2 * (self.n_points - 1) + 1)

    def echo(self) -> dict:
        return {
            "grid.k": self.k,
            "grid.n_points": self.n_points,
            "grid.cfl_safety": self.cfl_safety,
            "quad.order": self.quad_order,
        }


@dataclass(frozen=True)
class SpatialGrid:
    """Symmetric uniform grid on [-x_max, x_max]; n_points is odd so x = 0 is a node."""

    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > 0:
            raise ValueError("grid half-width must be positive")
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError("grid needs an odd number of points >= 3")

    @property
    def x_min(self) -> float:
        return -self.x_max

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def center(self) -> int:
        return self.n_points // 2

    @property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.x_min, self.x_max, self.n_points)
        x[self.center] = 0.0
        return x


def interp_linear_ext(x_nodes: np.ndarray, values: np.ndarray, x) -> np.ndarray:
    """Piecewise-linear interpolation along the last axis of ``values``.

    Outside the node range the boundary cell's slope is continued.
    """
    x = np.asarray(x, dtype=float)
    n = x_nodes.size
    h = (x_nodes[-1] - x_nodes[0]) / (n - 1)
    s = (x - x_nodes[0]) / h
    i = np.clip(np.floor(s).astype(int), 0, n - 2)
    w = s - i
    return values[..., i] * (1.0 - w) + values[..., i + 1] * w


@dataclass
class GridFunction:
    """Nodal values on a SpatialGrid; linear inside, linear extension outside."""

    grid: SpatialGrid
    values: np.ndarray
    extrapolation: str = "linear-extension"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.grid.n_points:
            raise ValueError("values do not match grid size")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def sample(cls, grid: SpatialGrid, f: Callable) -> "GridFunction":
        return cls(grid, np.broadcast_to(np.asarray(f(grid.nodes), dtype=float), (grid.n_points,)).copy())

    def __call__(self, x):
        out = interp_linear_ext(self.grid.nodes, self.values, x)
        return float(out) if np.ndim(out) == 0 else out

    def at_zero(self) -> float:
        return float(self.values[..., self.grid.center])

    def to_csv(self, path, header=("x", "u")):
        write_csv_columns(path, header, self.grid.nodes, self.values)


def write_csv_columns(path, header, xs, ys):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for a, b in zip(xs, ys):
            w.writerow([repr(float(a)), repr(float(b))])


@dataclass(frozen=True)
class TimeStepping:
    t_end: float
    dt: float
    n_steps: int

    @classmethod
    def for_grid(cls, dx: float, sigma_ref: float, t_end: float, cfl_safety: float = CFL_SAFETY) -> "TimeStepping":
        if t_end < 0:
            raise ValueError("time horizon must be non-negative")
        if t_end == 0:
            return cls(0.0, 0.0, 0)
        if sigma_ref == 0:
            return cls(t_end, t_end, 1)
        dt_max = cfl_safety * dx**2 / sigma_ref**2
        n_steps = math.ceil(t_end / dt_max)
        if n_steps > MAX_STEPS:
            raise CFLViolation(
                f"CFL needs {n_steps} steps (dx={dx:g}, sigma={sigma_ref:g}, t={t_end:g}); "
                f"step budget is {MAX_STEPS}"
            )
        return cls(t_end, t_end / n_steps, n_steps)

    def check(self, dx: float, sigma_hi: float):
        # hard monotonicity limit; cfl_safety only chooses dt below it
        if self.n_steps and sigma_hi > 0 and self.dt > dx**2 / sigma_hi**2 * (1 + 1e-12):
            raise CFLViolation(f"dt={self.dt:g} violates the CFL bound for sigma_hi={sigma_hi:g}, dx={dx:g}")


def march(values: np.ndarray, d: Driver, dx: float, steps: TimeStepping) -> np.ndarray:
    """Advance nodal data along the last axis; leading axes are independent problems."""
    steps.check(dx, d.sigma_hi)
    u = np.array(values, dtype=float, copy=True)
    if steps.n_steps == 0 or d.sigma_hi == 0:
        return u
    # dt * G(lap / dx^2) = max(c_hi * lap, c_lo * lap) because sigma_hi >= sigma_lo >= 0
    c_hi = 0.5 * steps.dt * d.sigma_hi**2 / dx**2
    c_lo = 0.5 * steps.dt * d.sigma_lo**2 / dx**2
    inner = u[..., 1:-1]
    lap = np.empty_like(inner)
    tmp = np.empty_like(inner)
    if c_lo == c_hi:
        for _ in range(steps.n_steps):
            np.add(u[..., 2:], u[..., :-2], out=lap)
            lap -= inner
            lap -= inner
            lap *= c_hi
            inner += lap
    else:
        for _ in range(steps.n_steps):
            np.add(u[..., 2:], u[..., :-2], out=lap)
            lap -= inner
            lap -= inner
            np.multiply(lap, c_lo, out=tmp)
            lap *= c_hi
            np.maximum(lap, tmp, out=lap)
            inner += lap
    if not np.all(np.isfinite(u)):
        raise NonFiniteSolution("non-finite values while stepping; enlarge the domain or reduce payoff growth")
    return u


def solve(d: Driver, phi: GridFunction, t: float, cfg: SolveConfig | None = None,
          sigma_ref: float | None = None) -> GridFunction:
    """Discretized u_phi(t, .) for the driver ``d``.

    ``sigma_ref`` (default ``d.sigma_hi``) sets the CFL time step.  Passing the
    largest sigma_hi of several drivers makes their solves share one time grid,
    which keeps the discrete comparison principle between them exact.
    """
    cfg = cfg or SolveConfig()
    ref = d.sigma_hi if sigma_ref is None else max(sigma_ref, d.sigma_hi)
    steps = TimeStepping.for_grid(phi.grid.dx, ref, t, cfg.cfl_safety)
    return GridFunction(phi.grid, march(phi.values, d, phi.grid.dx, steps))


# -- quadrature oracle ---------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule rescaled to integrate against the standard normal density."""

    order: int = DEFAULT_QUAD_ORDER
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x, w = np.polynomial.hermite.hermgauss(self.order)
        object.__setattr__(self, "nodes", math.sqrt(2.0) * x)
        object.__setattr__(self, "weights", w / math.sqrt(math.pi))

    def expect(self, f: Callable) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _legendre_normal_segment(f, a, b, q):
    x, w = np.polynomial.legendre.leggauss(q)
    half = 0.5 * (b - a)
    z = a + half * (x + 1.0)
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return float(half * np.dot(w, pdf * f(z)))


def gaussian_oracle(phi: Callable, sigma: float, t: float, x: float = 0.0,
                    q: int = DEFAULT_QUAD_ORDER, breakpoints: Sequence[float] | None = None) -> float:
    """Approximate E[phi(x + sigma sqrt(t) Z)] for standard normal Z.

    Smooth integrands use the Gauss-Hermite rule of order ``q``.  For integrands
    with kinks or jumps, pass their locations in ``breakpoints``: the line is
    then split there and each piece integrated by Gauss-Legendre of order ``q``
    against the normal density, which restores spectral accuracy.
    """
    if q < 16:
        raise ValueError("quadrature order must be >= 16")
    s = sigma * math.sqrt(t)
    if s == 0:
        return float(np.asarray(phi(np.array([x])))[0])
    g = lambda z: np.asarray(phi(x + s * z), dtype=float)
    if not breakpoints:
        return QuadratureRule(q).expect(g)
    zs = sorted({(b - x) / s for b in breakpoints})
    reach = max(abs(zs[0]), abs(zs[-1])) + 14.0
    edges = [-reach] + [z for z in zs if -reach < z < reach] + [reach]
    return sum(_legendre_normal_segment(g, a, b, q) for a, b in zip(edges[:-1], edges[1:]))


# -- domain sizing ---------------------------------------------------------------


class Envelope(NamedTuple):
    """Growth bound |phi(x) - phi(y)| <= C (1 + |x|^m + |y|^m) |x - y|."""

    C: float
    m_growth: int


def envelope_bound(env: Envelope, r):
    """Bound on |phi(x) - phi(0)| at radius r implied by the envelope."""
    r = np.abs(r)
    return env.C * (1.0 + r**env.m_growth) * r


def build_grid(envelope: Envelope, drivers: Sequence[Driver], T: float, cfg: SolveConfig | None = None,
               scale: float = 1.0, n_points: int | None = None) -> SpatialGrid:
    """Symmetric grid of half-width k * sigma_max * sqrt(T), doubled until the
    envelope's Gaussian tail mass outside the domain is below 1e-6 * scale."""
    cfg = cfg or SolveConfig()
    C, m = envelope
    if C < 0 or m < 0 or not T > 0:
        raise ValueError("build_grid needs C >= 0, m >= 0 and T > 0")
    sig = max(d.sigma_hi for d in drivers)
    base = cfg.k * (sig * math.sqrt(T) if sig > 0 else 1.0)
    n = n_points or cfg.n_points
    tol = TAIL_TOL * max(1.0, abs(scale))
    for i in range(MAX_DOUBLINGS + 1):
        half = base * 2**i
        if sig == 0 or C == 0:
            return SpatialGrid(half, n)
        tail = gaussian_oracle(
            lambda y, L=half: np.where(np.abs(y) > L, envelope_bound(envelope, y), 0.0),
            sig, T, 0.0, cfg.quad_order, breakpoints=(-half, half),
        )
        if tail <= tol:
            return SpatialGrid(half, n)
    raise GridBudgetError("payoff growth too strong for configured grid budget")
