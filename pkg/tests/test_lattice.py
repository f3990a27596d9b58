import math

import numpy as np
import pytest

from gconv.drivers import Driver
from gconv.expectation import CylinderPayoff, evaluate
from gconv.lattice import LatticeConfigError, evaluate_lattice
from gconv.pde import Envelope

D12 = Driver(1.0, 2.0)


def one(f, env=Envelope(1.0, 1)):
    return CylinderPayoff((1.0,), f, env)


def test_examples():
    assert evaluate_lattice(one(lambda x: x * x), D12, 512).value == pytest.approx(4.0, rel=5e-3)
    assert evaluate_lattice(one(lambda x: -x * x), D12, 512).value == pytest.approx(-1.0, rel=5e-3)
    c = evaluate_lattice(CylinderPayoff.constant(0.37), D12, 64).value
    assert c == 0.37


def test_probabilities_checked():
    with pytest.raises(LatticeConfigError):
        evaluate_lattice(one(np.sin), D12, 16, spacing=0.9)
    with pytest.raises(LatticeConfigError):
        evaluate_lattice(one(np.sin), D12, 0)


def test_zero_volatility():
    assert evaluate_lattice(one(lambda x: np.cos(x) + 1.0), Driver(0.0, 0.0), 8).value == 2.0


def test_snapping_reported():
    X = CylinderPayoff((0.3, 1.0), lambda a, b: a * b)
    r = evaluate_lattice(X, D12, 10)
    assert r.layers == (3, 10)
    assert max(r.snap_distances) < 1e-12
    r = evaluate_lattice(CylinderPayoff((0.33, 1.0), lambda a, b: a * b), D12, 10)
    assert r.snap_distances[0] == pytest.approx(0.03)
    rec = r.as_record()
    assert rec["oracle"] == "lattice" and rec["steps"] == 10
    with pytest.raises(LatticeConfigError):
        evaluate_lattice(CylinderPayoff((0.5, 0.52, 1.0), lambda a, b, c: a), D12, 10)


def test_classical_limit():
    # sigma_lo = sigma_hi: plain trinomial random walk, E[cos(sigma W_1)] = exp(-sigma^2/2)
    v = evaluate_lattice(one(np.cos, Envelope(1.0, 0)), Driver(1.0, 1.0), 512).value
    assert v == pytest.approx(math.exp(-0.5), abs=1e-3)


@pytest.mark.parametrize("f,env", [
    (lambda x: np.abs(x) ** 3, Envelope(3.0, 2)),
    (lambda x: np.maximum(x - 1.0, 0.0), Envelope(1.0, 0)),
    (np.sin, Envelope(1.0, 0)),
])
def test_agrees_with_pde(f, env):
    X = one(f, env)
    pde = evaluate(X, D12)
    assert evaluate_lattice(X, D12, 512).value == pytest.approx(pde, abs=1e-2 * max(1.0, abs(pde)))


def test_refinement_recorded():
    # recorded only: the error typically, but not strictly, shrinks with more steps
    X = one(lambda x: np.maximum(x - 1.0, 0.0), Envelope(1.0, 0))
    pde = evaluate(X, D12)
    errs = [abs(evaluate_lattice(X, D12, n).value - pde) for n in (64, 256, 1024)]
    assert errs[-1] < 1e-3
