import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gconv.drivers import Degenerate, Driver, Proper, convolve_drivers, convolve_many, eval_G

vols = st.floats(0.0, 5.0, allow_nan=False)


@st.composite
def drivers(draw):
    a, b = sorted((draw(vols), draw(vols)))
    return Driver(a, b)


def test_eval_examples():
    d = Driver(1, 2)
    assert eval_G(d, 2.0) == 4.0
    assert eval_G(d, -2.0) == -1.0
    assert eval_G(Driver(0.3, 0.7), 0.0) == 0.0
    np.testing.assert_array_equal(eval_G(d, np.array([2.0, -2.0, 0.0])), [4.0, -1.0, 0.0])
    assert d.G(2.0) == 4.0


@pytest.mark.parametrize("lo,hi", [(-0.1, 1.0), (2.0, 1.0), (0.0, float("inf")), (float("nan"), 1.0)])
def test_invalid_driver(lo, hi):
    with pytest.raises(ValueError):
        Driver(lo, hi)


def test_parse():
    assert Driver.parse("1,2") == Driver(1.0, 2.0)
    assert Driver.parse(" 0.5 , 3 ") == Driver(0.5, 3.0)
    for bad in ("1", "1,2,3", "a,b", "2,1"):
        with pytest.raises(ValueError):
            Driver.parse(bad)


def test_convolve_examples():
    assert convolve_drivers(Driver(1, 2), Driver(1.5, 3)) == Proper(Driver(1.5, 2))
    assert isinstance(convolve_drivers(Driver(1, 1.5), Driver(2, 3)), Degenerate)
    assert convolve_drivers(Driver(1, 2), Driver(0.5, 3)) == Proper(Driver(1, 2))
    # touching intervals still intersect
    assert convolve_drivers(Driver(1, 2), Driver(2, 3)) == Proper(Driver(2, 2))


def test_convolve_many_examples():
    ds = [Driver(1, 3), Driver(2, 4), Driver(0, 2.5)]
    for perm in itertools.permutations(ds):
        assert convolve_many(perm) == Proper(Driver(2, 2.5))
    assert convolve_many([Driver(0, 1), Driver(2, 3), Driver(0, 5)]).is_degenerate
    with pytest.raises(ValueError):
        convolve_many([])


@given(st.lists(drivers(), min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_convolve_many_order_free(ds, rnd):
    shuffled = list(ds)
    rnd.shuffle(shuffled)
    assert convolve_many(ds) == convolve_many(shuffled)
    # right-nested parenthesization agrees with the left fold
    acc = Proper(ds[-1])
    for d in reversed(ds[:-1]):
        acc = acc if acc.is_degenerate else convolve_drivers(d, acc.driver)
    assert acc == convolve_many(ds)


@given(drivers(), drivers())
def test_proper_iff_overlap(a, b):
    c = convolve_drivers(a, b)
    assert c.is_degenerate == (max(a.sigma_lo, b.sigma_lo) > min(a.sigma_hi, b.sigma_hi))


@given(drivers(), drivers(), st.floats(-10, 10))
def test_driver_infconvolution_formula(a, b, alpha):
    c = convolve_drivers(a, b)
    if c.is_degenerate:
        return
    ys = alpha * np.linspace(-2.0, 3.0, 501)  # contains 0 and alpha
    vals = eval_G(a, alpha - ys) + eval_G(b, ys)
    g = eval_G(c.driver, alpha)
    assert np.all(g <= vals + 1e-12 * (1 + abs(alpha)))
    assert vals.min() == pytest.approx(g, abs=1e-12 * (1 + abs(alpha)))


@given(drivers(), st.floats(-100, 100), st.integers(0, 10))
def test_homogeneity_powers_of_two(d, alpha, k):
    assert eval_G(d, 2.0**k * alpha) == 2.0**k * eval_G(d, alpha)


@given(drivers(), st.floats(-100, 100), st.floats(-100, 100))
def test_subadditive(d, a, b):
    assert eval_G(d, a + b) <= eval_G(d, a) + eval_G(d, b) + 1e-12 * (abs(a) + abs(b) + 1)


def test_contains():
    assert Driver(0.5, 3).contains(Driver(1, 2))
    assert not Driver(1, 2).contains(Driver(0.5, 3))
