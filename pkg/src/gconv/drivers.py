"""Sublinear drivers G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2 and their inf-convolution."""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Union

import numpy as np


@dataclass(frozen=True)
class Driver:
    """Volatility interval [sigma_lo, sigma_hi]."""

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lo), float(self.sigma_hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"driver bounds must be finite, got [{lo}, {hi}]")
        if not 0.0 <= lo <= hi:
            raise ValueError(f"driver requires 0 <= sigma_lo <= sigma_hi, got [{lo}, {hi}]")
        object.__setattr__(self, "sigma_lo", lo)
        object.__setattr__(self, "sigma_hi", hi)

    @classmethod
    def parse(cls, text: str) -> "Driver":
        """Parse the ``"lo,hi"`` text form used by the CLI and config files."""
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"driver must be given as 'lo,hi', got {text!r}")
        try:
            lo, hi = (float(p.strip()) for p in parts)
        except ValueError:
            raise ValueError(f"driver must be given as 'lo,hi', got {text!r}") from None
        return cls(lo, hi)

    def G(self, alpha):
        return eval_G(self, alpha)

    def contains(self, other: "Driver") -> bool:
        """True when ``other``'s interval lies inside this one."""
        return self.sigma_lo <= other.sigma_lo and other.sigma_hi <= self.sigma_hi

    def __str__(self):
        return f"[{self.sigma_lo!r},{self.sigma_hi!r}]"


@dataclass(frozen=True)
class Proper:
    driver: Driver

    is_degenerate = False

    def __str__(self):
        return f"Proper({self.driver})"


@dataclass(frozen=True)
class Degenerate:
    """Inf-convolution of drivers with disjoint intervals: identically -inf."""

    is_degenerate = True

    def __str__(self):
        return "Degenerate(-inf)"


DriverConvolution = Union[Proper, Degenerate]


def eval_G(d: Driver, alpha):
    """Evaluate the driver; accepts scalars or arrays."""
    alpha = np.asarray(alpha, dtype=float)
    val = 0.5 * (d.sigma_hi**2 * np.maximum(alpha, 0.0) - d.sigma_lo**2 * np.maximum(-alpha, 0.0))
    return float(val) if val.ndim == 0 else val


def convolve_drivers(a: Driver, b: Driver) -> DriverConvolution:
    lo = max(a.sigma_lo, b.sigma_lo)
    hi = min(a.sigma_hi, b.sigma_hi)
    if lo <= hi:
        return Proper(Driver(lo, hi))
    return Degenerate()


def convolve_many(ds: Iterable[Driver]) -> DriverConvolution:
    ds = list(ds)
    if not ds:
        raise ValueError("convolve_many needs at least one driver")

    def step(acc: DriverConvolution, d: Driver) -> DriverConvolution:
        if acc.is_degenerate:
            return acc
        return convolve_drivers(acc.driver, d)

    return reduce(step, ds[1:], Proper(ds[0]))
