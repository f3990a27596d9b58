"""Brute-force check of G-expectations on a recombining trinomial lattice.

Each node takes the larger of the two one-step expectations under the extreme
volatilities sigma_lo and sigma_hi.  Since G is piecewise linear in the second
difference, bang-bang controls are enough.  The lattice has no spatial
truncation and no boundary rule, so it is an independent discretization of the
same object the PDE engine computes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GConvError
from .expectation import CylinderPayoff, as_driver


class LatticeConfigError(GConvError):
    pass


@dataclass
class LatticeResult:
    value: float
    n_time_steps: int
    dt: float
    dz: float
    layers: tuple
    snap_distances: tuple

    def as_record(self) -> dict:
        return {
            "value": self.value,
            "oracle": "lattice",
            "steps": self.n_time_steps,
            "dz": self.dz,
            "layers": list(self.layers),
            "snap_distances": list(self.snap_distances),
        }


def _induct(values: np.ndarray, n: int, p_lo: float, p_hi: float) -> np.ndarray:
    """n backward steps along the last axis; width shrinks by 2 per step."""
    v = values
    for _ in range(n):
        up, mid, dn = v[..., 2:], v[..., 1:-1], v[..., :-2]
        lap = up + dn - 2.0 * mid
        v = mid + np.maximum(p_hi * lap, p_lo * lap)
    return v


def evaluate_lattice(X: CylinderPayoff, d, n_time_steps: int = 512, spacing: float = math.sqrt(3.0)) -> LatticeResult:
    """Root value of the max-over-volatility backward induction.

    ``spacing`` sets dz = spacing * sigma_hi * sqrt(dt); the trinomial weights
    need spacing >= 1.
    """
    d = as_driver(d)
    if n_time_steps < 1:
        raise LatticeConfigError("need at least one time step")
    T = X.horizon
    dt = T / n_time_steps
    layers = [int(round(t / dt)) for t in X.times]
    snaps = tuple(abs(k * dt - t) for k, t in zip(layers, X.times))
    if any(b <= a for a, b in zip(layers, layers[1:])):
        raise LatticeConfigError(f"{n_time_steps} steps cannot separate payoff times {X.times}")

    if d.sigma_hi == 0:
        zero = [np.zeros(1)] * X.m
        return LatticeResult(float(np.asarray(X.phi(*zero)).ravel()[0]), n_time_steps, dt, 0.0, tuple(layers), snaps)

    dz = spacing * d.sigma_hi * math.sqrt(dt)
    probs = []
    for s in (d.sigma_lo, d.sigma_hi):
        p = s * s * dt / (2.0 * dz * dz)
        p0 = 1.0 - 2.0 * p
        if p < 0 or p0 < -1e-15:
            raise LatticeConfigError(f"negative transition probability (p={p:g}, p0={p0:g}); need dz^2 >= sigma_hi^2 dt")
        probs.append(p)
    p_lo, p_hi = probs

    seg = np.diff([0] + layers)
    axes = [dz * np.arange(-n, n + 1) for n in seg]
    vals = np.asarray(X.phi(*np.meshgrid(*axes, indexing="ij")), dtype=float)
    vals = np.broadcast_to(vals, tuple(a.size for a in axes)).copy()
    for n in reversed(seg):
        vals = _induct(vals, int(n), p_lo, p_hi)[..., 0]
    return LatticeResult(float(vals), n_time_steps, dt, dz, tuple(layers), snaps)
