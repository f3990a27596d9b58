import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from gconv.drivers import Driver
from gconv.errors import CFLViolation, GridBudgetError, NonFiniteSolution
from gconv.pde import (Envelope, GridFunction, QuadratureRule, SolveConfig, SpatialGrid, TimeStepping,
                       build_grid, gaussian_oracle, interp_linear_ext, march, solve)

D12 = Driver(1.0, 2.0)
GRID = SpatialGrid(16.0, 401)
SMALL = SpatialGrid(8.0, 161)


def sample(f, grid=GRID):
    return GridFunction.sample(grid, f)


# -- grid plumbing --------------------------------------------------------------


def test_grid_shape():
    g = SpatialGrid(3.0, 7)
    assert g.x_min == -3.0 and g.dx == 1.0 and g.center == 3
    assert g.nodes[g.center] == 0.0
    for bad in ((0.0, 7), (1.0, 6), (1.0, 1)):
        with pytest.raises(ValueError):
            SpatialGrid(*bad)


def test_config_validation():
    for kw in ({"k": 3.0}, {"n_points": 100}, {"cfl_safety": 1.5}, {"quad_order": 8}):
        with pytest.raises(ValueError):
            SolveConfig(**kw)
    cfg = SolveConfig(n_points=101)
    assert cfg.refined().n_points == 201 and cfg.halved().n_points == 51
    assert set(cfg.echo()) == {"grid.k", "grid.n_points", "grid.cfl_safety", "quad.order"}


def test_linear_extension():
    g = SpatialGrid(1.0, 3)
    v = np.array([1.0, 0.0, 2.0])
    np.testing.assert_allclose(interp_linear_ext(g.nodes, v, [-2.0, -0.5, 0.5, 3.0]), [2.0, 0.5, 1.0, 6.0])
    gf = GridFunction(g, v)
    assert gf(0.25) == 0.5 and gf.at_zero() == 0.0
    with pytest.raises(ValueError):
        GridFunction(g, np.array([1.0, np.nan, 0.0]))


def test_csv_dump(tmp_path):
    gf = sample(lambda x: x / 3.0, SpatialGrid(1.0, 5))
    gf.to_csv(tmp_path / "u.csv")
    rows = list(csv.reader(open(tmp_path / "u.csv")))
    assert rows[0] == ["x", "u"] and len(rows) == 6
    # full precision round-trips
    assert float(rows[2][1]) == gf.values[1]


def test_time_stepping():
    ts = TimeStepping.for_grid(0.1, 2.0, 1.0)
    assert ts.dt <= 0.9 * 0.01 / 4.0 and ts.n_steps == math.ceil(1.0 / (0.9 * 0.01 / 4.0))
    assert ts.n_steps * ts.dt == pytest.approx(1.0)
    assert TimeStepping.for_grid(0.1, 2.0, 0.0).n_steps == 0
    with pytest.raises(CFLViolation):
        TimeStepping.for_grid(1e-5, 3.0, 10.0)
    with pytest.raises(CFLViolation):
        TimeStepping(1.0, 1.0, 1).check(0.1, 2.0)


# -- scheme examples --------------------------------------------------------------


def test_linear_data_is_stationary():
    phi = sample(lambda x: x)
    u = solve(D12, phi, 1.0)
    # the second difference of linear data is zero up to rounding of the nodes
    np.testing.assert_allclose(u.values, phi.values, rtol=0, atol=1e-12)


def test_square_moments():
    assert solve(D12, sample(lambda x: x * x), 1.0).at_zero() == pytest.approx(4.0, rel=1e-3)
    assert solve(D12, sample(lambda x: -x * x), 1.0).at_zero() == pytest.approx(-1.0, rel=1e-3)


def test_classical_heat_equation():
    # sigma_lo = sigma_hi: classical heat flow, E[cos(sigma W_t)] = exp(-sigma^2 t / 2)
    u = solve(Driver(1.5, 1.5), sample(np.cos, SpatialGrid(16.0, 1601)), 0.8)
    assert u.at_zero() == pytest.approx(math.exp(-0.5 * 1.5**2 * 0.8), abs=1e-4)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_detected():
    with pytest.raises(NonFiniteSolution):
        solve(D12, GridFunction(SMALL, np.where(SMALL.nodes > 7, 1e308, -1e308)), 0.1)


# -- structural invariants ------------------------------------------------------------

coeffs = st.lists(st.floats(-2, 2), min_size=4, max_size=4)


def trig_poly(c):
    return lambda x: c[0] * np.sin(x) + c[1] * np.cos(2 * x) + c[2] * np.abs(x - 0.5) + c[3] * np.maximum(x, -1)


@given(coeffs, st.floats(0.0, 3.0))
def test_comparison_principle(c, shift):
    f = trig_poly(c)
    lo = sample(f, SMALL)
    hi = sample(lambda x: f(x) + shift * (1 + np.cos(x)), SMALL)
    assert np.all(solve(D12, lo, 0.5).values <= solve(D12, hi, 0.5).values)


@given(st.floats(-1e3, 1e3))
def test_constants_exact(c):
    u = solve(D12, sample(lambda x: np.full_like(x, c), SMALL), 0.7)
    assert np.all(u.values == c)


@given(coeffs, st.floats(-50, 50))
def test_cash_translation(c, k):
    f = trig_poly(c)
    a = solve(D12, sample(f, SMALL), 0.5).values
    b = solve(D12, sample(lambda x: f(x) + k, SMALL), 0.5).values
    # exact up to rounding of the shifted data
    np.testing.assert_allclose(b, a + k, rtol=0, atol=1e-12 * (1 + abs(k)) * 64)


@given(coeffs, st.integers(0, 8))
def test_power_of_two_homogeneity(c, k):
    f = trig_poly(c)
    a = solve(D12, sample(f, SMALL), 0.5).values
    b = solve(D12, sample(lambda x: 2.0**k * f(x), SMALL), 0.5).values
    np.testing.assert_array_equal(b, 2.0**k * a)


@given(coeffs, coeffs)
def test_subadditivity(c1, c2):
    f, g = trig_poly(c1), trig_poly(c2)
    s = solve(D12, sample(lambda x: f(x) + g(x), SMALL), 0.5).values
    a = solve(D12, sample(f, SMALL), 0.5).values
    b = solve(D12, sample(g, SMALL), 0.5).values
    assert np.all(s <= a + b + 1e-12)


@given(coeffs)
def test_interval_monotonicity(c):
    phi = sample(trig_poly(c), SMALL)
    inner, outer = Driver(1.0, 1.5), Driver(0.5, 2.0)
    # one time grid for both, as the comparison needs
    a = solve(inner, phi, 0.5, sigma_ref=2.0).values
    b = solve(outer, phi, 0.5, sigma_ref=2.0).values
    assert np.all(a <= b + 1e-12)


def test_semigroup():
    phi = sample(lambda x: x * x)
    direct = solve(D12, phi, 1.0).values
    chained = solve(D12, solve(D12, phi, 0.5), 0.5).values
    inner = np.abs(GRID.nodes) <= 8.0
    assert np.max(np.abs(direct - chained)[inner]) <= 1e-6


def test_batched_march_matches_rows():
    vals = np.stack([np.sin(SMALL.nodes), np.abs(SMALL.nodes)])
    steps = TimeStepping.for_grid(SMALL.dx, 2.0, 0.3)
    both = march(vals, D12, SMALL.dx, steps)
    for i in range(2):
        np.testing.assert_array_equal(both[i], march(vals[i], D12, SMALL.dx, steps))


# -- oracle -----------------------------------------------------------------------------


def test_quadrature_rule():
    r = QuadratureRule(64)
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-12)
    for k in (1, 3, 5, 7):
        assert abs(r.expect(lambda z: z**k)) <= 1e-10
    assert r.expect(lambda z: z**4) == pytest.approx(3.0, rel=1e-12)


def test_oracle_examples():
    assert gaussian_oracle(lambda x: x * x, 2.0, 1.0) == pytest.approx(4.0, abs=1e-10)
    # E|W_1|^3 = 2 sqrt(2/pi) in closed form
    w3 = 2.0 * math.sqrt(2.0 / math.pi)
    assert w3 == pytest.approx(1.5958, abs=1e-4)
    assert gaussian_oracle(lambda x: np.abs(x) ** 3, 1.0, 1.0, breakpoints=(0.0,)) == pytest.approx(w3, abs=1e-6)
    # half-normal mean sigma / sqrt(2 pi)
    half = 2.0 / math.sqrt(2.0 * math.pi)
    assert gaussian_oracle(lambda x: np.maximum(x, 0.0), 2.0, 1.0, breakpoints=(0.0,)) == pytest.approx(half, abs=1e-8)


def test_oracle_shift_and_degenerate():
    assert gaussian_oracle(lambda x: x * x, 1.0, 1.0, x=2.0) == pytest.approx(5.0, abs=1e-10)
    assert gaussian_oracle(np.cos, 0.0, 1.0, x=0.3) == pytest.approx(math.cos(0.3))
    with pytest.raises(ValueError):
        gaussian_oracle(np.cos, 1.0, 1.0, q=8)


@pytest.mark.parametrize("f,sigma,kinks", [
    (lambda x: x * x, 2.0, ()),
    (lambda x: np.maximum(x - 1.0, 0.0), 2.0, (1.0,)),
    (lambda x: -x * x, 1.0, ()),
    (lambda x: -np.abs(x), 1.0, (0.0,)),
])
def test_convex_concave_route_to_extreme_sigma(f, sigma, kinks):
    grid = build_grid(Envelope(1.0, 1), [D12], 1.0)
    u = solve(D12, GridFunction.sample(grid, f), 1.0).at_zero()
    ref = gaussian_oracle(f, sigma, 1.0, breakpoints=kinks or None)
    assert abs(u - ref) <= 1e-3 * max(1.0, abs(ref))


# -- domain sizing ------------------------------------------------------------------------


def _tail_closed_form(C, m, sigma, L):
    """2 * int_L^inf C (1 + y^m) y phi_sigma(y) dy via upper incomplete gamma functions."""
    def moment(k):
        a = (k + 1) / 2.0
        return sigma**k * 2 ** (k / 2.0) * special.gamma(a) * special.gammaincc(a, L * L / (2 * sigma**2)) / (2 * math.sqrt(math.pi))
    return 2.0 * C * (moment(1) + moment(m + 1))


def test_build_grid_examples():
    assert build_grid(Envelope(1.0, 2), [D12], 1.0).x_max >= 16.0
    assert build_grid(Envelope(1.0, 0), [Driver(0.5, 1.0)], 1.0).x_max == 8.0
    expected = next(L for L in (16.0, 32.0, 64.0, 128.0) if _tail_closed_form(1.0, 3, 2.0, L) <= 1e-6)
    assert build_grid(Envelope(1.0, 3), [D12], 1.0).x_max == expected


def test_build_grid_uses_largest_sigma():
    g = build_grid(Envelope(1.0, 1), [Driver(0, 1), Driver(1, 3)], 1.0)
    assert g.x_max == pytest.approx(24.0)


def test_build_grid_budget_error(monkeypatch):
    import gconv.pde as pde

    monkeypatch.setattr(pde, "MAX_DOUBLINGS", 1)
    with pytest.raises(GridBudgetError, match="too strong"):
        build_grid(Envelope(1e6, 6), [D12], 1.0, SolveConfig(k=4.0))
