"""Coherent risk measures rho(X) = E[-X] and two-agent optimal risk transfer.

Agent A holds the position X and sells F to agent B:

    inf_F  rho_A(X - F) + rho_B(F)

With Y = -X and psi = -F this is E_A[Y - psi] + E_B[psi], so the infconv
machinery applies directly and F* = -psi*.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import Degenerate, Driver, convolve_drivers
from .expectation import CylinderPayoff, backward, evaluate
from .infconv import (INFCONV_CONFIG, DivergenceReport, InfConvProblem, OptimizerSettings,
                      OptimizerTrace, detect_divergence, minimize)
from .pde import SolveConfig


def rho(X: CylinderPayoff, d: Driver, cfg: SolveConfig | None = None, disc=None) -> float:
    return evaluate(-X, d, cfg, disc)


@dataclass
class TransferQuote:
    value: float
    contract: Callable | None          # F* as a function of the contract increments
    price_bound: float | None          # -rho_B(F*): largest pi with rho_B(F* - pi) <= 0
    rho_A_no_transfer: float
    trace: OptimizerTrace | None = field(default=None, repr=False)
    divergence: DivergenceReport | None = None

    @property
    def degenerate(self) -> bool:
        return self.divergence is not None

    def as_record(self) -> dict:
        rec = {
            "value": self.value,
            "rho_A_no_transfer": self.rho_A_no_transfer,
            "price_bound": self.price_bound,
            "degenerate": self.degenerate,
        }
        if self.trace is not None:
            rec.update({"iterations": self.trace.iterations, "converged": self.trace.converged})
        if self.divergence is not None:
            rec.update({f"divergence.{k}": v for k, v in self.divergence.as_record().items()})
        return rec


def optimal_transfer(X: CylinderPayoff, d_A: Driver, d_B: Driver, cfg: SolveConfig | None = None,
                     settings: OptimizerSettings | None = None, **problem_kw) -> TransferQuote:
    cfg = cfg or INFCONV_CONFIG
    Y = -X
    if isinstance(convolve_drivers(d_A, d_B), Degenerate):
        # A can sell B an arbitrarily large short gamma position: the value is -inf
        no_transfer = rho(X, d_A, cfg)
        div = detect_divergence(d_A, d_B, X.horizon, cfg=cfg)
        return TransferQuote(float("-inf"), None, None, no_transfer, None, div)

    p = InfConvProblem(d_A, d_B, Y, cfg=cfg, settings=settings or OptimizerSettings(), **problem_kw)
    trace = minimize(p)
    no_transfer = evaluate(Y, d_A, disc=p.disc)
    psi_nodes = p.contract_on_grid(trace.best_psi)
    # rho_B(F*) = E_B[-F*] = E_B[psi*]
    rho_B = float(backward(psi_nodes, X.durations[:p.contract_index], d_B, p.disc))
    psi = trace.contract()

    def F(*x):
        return -np.asarray(psi(*x))

    return TransferQuote(trace.best_J, F, 0.0 - rho_B, no_transfer, trace)
