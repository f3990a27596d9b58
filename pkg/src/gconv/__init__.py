"""G-expectations under volatility uncertainty and their inf-convolutions."""

import os

# GCONV_THREADS caps BLAS threads; it has to be set before numpy loads its backend
_threads = os.environ.get("GCONV_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .drivers import Degenerate, Driver, Proper, convolve_drivers, convolve_many, eval_G  # noqa: E402
from .errors import (CFLViolation, DegenerateConvolution, GConvError, GridBudgetError,  # noqa: E402
                     NonFiniteSolution)
from .expectation import CylinderPayoff, conditional, evaluate, evaluate_record  # noqa: E402
from .infconv import (InfConvProblem, OptimizerSettings, convolve_n_expectations,  # noqa: E402
                      detect_divergence, functional_J, minimize, verify_theorem)
from .lattice import evaluate_lattice  # noqa: E402
from .pde import Envelope, GridFunction, SolveConfig, SpatialGrid, build_grid, gaussian_oracle, solve  # noqa: E402
from .risk import optimal_transfer, rho  # noqa: E402

__all__ = [
    "CFLViolation", "CylinderPayoff", "Degenerate", "DegenerateConvolution", "Driver", "Envelope",
    "GConvError", "GridBudgetError", "GridFunction", "InfConvProblem", "NonFiniteSolution",
    "OptimizerSettings", "Proper", "SolveConfig", "SpatialGrid", "build_grid", "conditional",
    "convolve_drivers", "convolve_many", "convolve_n_expectations", "detect_divergence", "eval_G",
    "evaluate", "evaluate_lattice", "evaluate_record", "functional_J", "gaussian_oracle", "minimize",
    "optimal_transfer", "rho", "solve", "verify_theorem",
]
__version__ = "0.1.0"
