import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signorini_lab import exact
from signorini_lab.errors import InadmissibleBall
from signorini_lab.freeboundary import band_width, coincidence_set, snap_center
from signorini_lab.functionals import (
    FrequencyProfile,
    RegularityParams,
    WeissParams,
    adjusted_frequency,
    epiperimetric_check,
    frequency,
    frequency_limit,
    growth_slope,
    homogeneous_weiss,
    is_nondecreasing,
    profile,
    truncate,
    truncated_frequency,
    weiss,
    weiss0,
    weiss_value,
)
from signorini_lab.grid import BallSpec, GridFunction, ball_energy, make_grid, sample, sphere_flux_deficit, sphere_mass
from signorini_lab.solver import BoundaryData, CoefficientField, solve_drift, solve_signorini

P = WeissParams(2, 1.9, 1.5, 2.0)


@pytest.fixture(scope="module")
def g513():
    return make_grid(2, 513)


@pytest.fixture(scope="module")
def unit_grid():
    return make_grid(2, 257, 1.25)


@pytest.fixture(scope="module")
def drift_solution():
    g = make_grid(2, 129)
    u, _ = solve_drift(g, BoundaryData.from_exact(exact.regular32(), g), CoefficientField.drift(g, (0.5, 0.0)))
    fb = coincidence_set(u)
    return u, snap_center(fb, (0.0, 0.0), band_width(fb, u) + g.h)


@given(st.floats(0.05, 1.95), st.floats(1.5, 2.0), st.floats(2.0, 5.0), st.integers(2, 3))
def test_weiss_params_derived_fields(alpha, kappa, kappa0, n):
    p = WeissParams(n, alpha, kappa, kappa0)
    assert p.a == (n + 2 * kappa - 2) / alpha
    assert p.b == (n + 2 * kappa0) / alpha
    assert 1 - p.b * p.t0**alpha >= 0.5 - 1e-12


def test_weiss_params_validation():
    with pytest.raises(ValueError):
        WeissParams(2, 2.0)
    with pytest.raises(ValueError):
        WeissParams(2, 1.0, 1.5, 1.9)


def test_regularity_beta():
    assert RegularityParams(2, 1.0).beta == 1.0 / (4 * 5)
    assert RegularityParams(3, 0.5, delta=2.0).gamma == 0.5
    assert RegularityParams(3, 0.5).gamma is None


@given(st.floats(8 * 2 / 256, 0.379))
def test_frequency_of_homogeneous_fields(r):
    g = make_grid(2, 257)
    assert frequency(exact.regular32().on(g), ((0.0, 0.0), r)) == pytest.approx(1.5, abs=0.02)
    assert frequency(exact.qpoly(2, [1.0]).on(g), ((0.0, 0.0), r)) == pytest.approx(2.0, abs=0.02)


def test_frequency_of_constant(g257):
    assert frequency(sample(lambda p: np.ones(len(p)), g257), ((0.0, 0.0), 0.3)) == 0.0


def test_truncation_arithmetic():
    p = WeissParams(2, 0.5, 1.5, 2.0)
    assert p.b == 12.0
    assert truncate(1.5, 0.001, p) == 2.0
    assert 1.5 / (1 - 12 * 0.001**0.5) == pytest.approx(2.417, abs=1e-3)
    assert truncate(1.5, 1e-6, p) == pytest.approx(1.518, abs=1e-3)
    assert truncate(2.5, 0.001, p) == 2.0
    q = WeissParams(2, 1.9)
    for N in (0.7, 1.5, 1.99, 3.0):
        assert truncate(N, 1e-12, q) == pytest.approx(min(N, 2.0), rel=1e-15)


def test_truncated_frequency_respects_t0(reg257):
    p = WeissParams(2, 1.9)
    with pytest.raises(InadmissibleBall):
        truncated_frequency(reg257, ((0.0, 0.0), p.t0 * 1.01), p)
    assert truncated_frequency(reg257, ((0.0, 0.0), 0.2), p) == pytest.approx(
        min(1.5 / (1 - p.b * 0.2**1.9), 2.0), abs=0.02)


@pytest.mark.parametrize("name,k", [("regular32", 1.5), ("qpoly2d:1", 2.0)])
def test_weiss_of_homogeneous_fields(g513, name, k):
    sol = exact.from_name(name)
    f = sol.on(g513)
    M = exact.oracle_sphere_mass(sol, 1.0)
    for t in (0.15, 0.25, P.t0):
        assert weiss(f, ((0.0, 0.0), t), P, k) == pytest.approx(homogeneous_weiss(t, M, P, k), rel=0.02)
        ball = BallSpec.at_origin(2, t)
        D, H = ball_energy(f, ball), sphere_mass(f, ball)
        # no corrections: the bracket vanishes
        assert abs(D - k * H / t) <= 0.01 * D


def test_weiss_of_zero(g129):
    z = GridFunction(g129, np.zeros(g129.shape))
    assert weiss(z, ((0.0, 0.0), 0.3), P) == 0.0


def test_weiss0_examples(unit_grid):
    reg = exact.regular32().on(unit_grid)
    q = exact.qpoly(2, [1.0]).on(unit_grid)
    assert abs(weiss0(reg, 1.5)) <= 0.01 * math.pi
    assert abs(weiss0(q, 2.0)) <= 0.01 * math.pi
    # D - 2H = 3pi/2 - 2pi
    assert weiss0(reg, 2.0) == pytest.approx(-math.pi / 2, rel=0.02)
    assert weiss0(GridFunction(unit_grid, np.zeros(unit_grid.shape)), 1.5) == 0.0


def test_profile_of_regular_field(reg257):
    pr = profile(reg257, (0.0, 0.0), np.linspace(0.1, 0.4, 7), WeissParams(2, 1.9, t0_config=0.4))
    assert np.all(np.abs(pr.N - 1.5) <= 0.02)
    W = pr.W[1.5][np.isfinite(pr.W[1.5])]
    assert np.all(W >= 0) and is_nondecreasing(W, 1e-3 * reg257.scale)
    assert np.all(pr.m[1.5] == pytest.approx(math.sqrt(math.pi), rel=0.01))


def test_profile_flags_small_and_large_radii(reg257):
    h = reg257.grid.h
    pr = profile(reg257, (0.0, 0.0), [2 * h, 3 * h, 8 * h, 0.3, 0.5], P)
    assert list(pr.degenerate) == [True, True, False, False, False]
    assert np.isnan(pr.N[0]) and np.isfinite(pr.N[2])
    # above t0 the gauge-corrected columns are not defined
    assert np.isnan(pr.Nhat[-1]) and np.isfinite(pr.N[-1])
    with pytest.raises(ValueError):
        profile(reg257, (0.0, 0.0), [], P)


def test_profile_csv_roundtrip(reg257, tmp_path):
    pr = profile(reg257, (0.0, 0.0), [0.01, 0.05, 0.2, 0.5], P)
    path, side = pr.write(tmp_path / "p.csv")
    back = FrequencyProfile.read(path)
    assert back.to_csv() == pr.to_csv()
    for name in ("radii", "H", "D", "N", "Ntilde", "Nhat", "degenerate"):
        assert np.array_equal(getattr(back, name), getattr(pr, name), equal_nan=True)
    assert back.params == pr.params
    header = path.read_text().splitlines()[0]
    assert header == "r,H,D,N,Ntilde,Nhat,W_1p5,W_2,m_1p5,m_2,degenerate"


def test_drift_profile_nhat_monotone(drift_solution):
    u, c = drift_solution
    pr = profile(u, c, np.linspace(0.1, P.t0, 12), P)
    assert is_nondecreasing(pr.Nhat, 1e-3)
    assert np.all(pr.W[1.5] >= -1e-3 * u.scale)
    assert np.all(pr.Nhat >= 1.45)


def test_frequency_limit_examples(g513):
    lim = frequency_limit(exact.regular32().on(g513), (0.0, 0.0), P)
    assert lim.value == pytest.approx(1.5, abs=0.03) and lim.good
    lim = frequency_limit(exact.qpoly(2, [1.0]).on(g513), (0.0, 0.0), P)
    assert lim.value == pytest.approx(2.0, abs=0.03)
    u, _ = solve_signorini(g513, BoundaryData.from_exact(exact.regular32(), g513))
    fb = coincidence_set(u)
    c = snap_center(fb, (0.0, 0.0), band_width(fb, u) + g513.h)
    assert frequency_limit(u, c, P).value == pytest.approx(1.5, abs=0.05)


def test_frequency_limit_needs_rungs(reg257):
    with pytest.raises(ValueError):
        frequency_limit(reg257, (0.0, 0.0), P)


def test_growth_slopes(g513):
    h = g513.h
    radii = np.geomspace(8 * h, 0.4, 8)
    assert growth_slope(exact.regular32().on(g513), (0.0, 0.0), radii) == pytest.approx(4.0, abs=0.05)
    assert growth_slope(exact.qpoly(2, [1.0]).on(g513), (0.0, 0.0), radii) == pytest.approx(5.0, abs=0.05)
    assert growth_slope(exact.regular32().on(g513), (0.0, 0.0), radii, "D") == pytest.approx(3.0, abs=0.05)
    with pytest.raises(ValueError):
        growth_slope(exact.regular32().on(g513), (0.0, 0.0), radii[:3])


@given(st.floats(0.05, 0.37), st.sampled_from([1.5, 2.0]), st.sampled_from(["regular32", "qpoly2d:1"]))
def test_weiss_frequency_identity(t, k, name):
    f = _field(name)
    ball = BallSpec.at_origin(2, t)
    D, H = ball_energy(f, ball), sphere_mass(f, ball)
    p = P.with_kappa(k)
    Nt = adjusted_frequency(t * D / H, t, p)
    other = (1 - p.b * t**p.alpha) * (Nt - k) * math.exp(p.a * t**p.alpha) * H / t ** (2 + 2 * k - 1)
    assert weiss_value(D, H, t, P, k) == pytest.approx(other, rel=1e-12, abs=1e-14)


_FIELDS = {}


def _field(name):
    if name not in _FIELDS:
        _FIELDS[name] = exact.from_name(name).on(make_grid(2, 257))
    return _FIELDS[name]


@pytest.mark.parametrize("name,k", [("regular32", 1.5), ("qpoly2d:1", 2.0)])
def test_weiss_derivative_lower_bound(name, k):
    f = _field(name)
    p = P.with_kappa(k)
    dt = 1e-3
    for t in (0.1, 0.2, 0.3):
        lhs = (weiss(f, ((0.0, 0.0), t + dt), p) - weiss(f, ((0.0, 0.0), t), p)) / dt
        deficit = sphere_flux_deficit(f, BallSpec.at_origin(2, t), k, p.b, p.alpha)
        rhs = math.exp(p.a * t**p.alpha) * t ** (-(2 + 2 * k - 2)) * deficit
        assert lhs >= (1 - 0.05) * rhs


def test_epiperimetric_exact_profile(g257):
    res = epiperimetric_check(exact.regular32().on(g257), BallSpec.at_origin(2, 0.75))
    assert res.passed
    assert abs(res.w_energy) <= 0.01 and abs(res.v_energy) <= 0.01
    assert res.eta == 1 / 7


def test_epiperimetric_perturbed_profile(g257):
    sol = exact.regular32()

    def f(p):
        rho = np.hypot(p[:, 0], p[:, 1])
        theta = np.arctan2(np.abs(p[:, 1]), p[:, 0])
        return sol(p) + 0.1 * rho**2 * (1 + np.cos(2 * theta)) / 2

    res = epiperimetric_check(sample(f, g257), BallSpec.at_origin(2, 0.75))
    assert res.w_energy >= 0 and res.passed
    assert res.lhs <= res.rhs + res.tol


def test_epiperimetric_negative_weiss_energy(g257):
    # constant trace c: W0(w) = -(3/2) pi c^2, the minimizer is the constant with W0 = -3 pi c^2
    res = epiperimetric_check(sample(lambda p: np.full(len(p), 0.4), g257), BallSpec.at_origin(2, 0.75))
    c2 = (0.4 / 0.75**1.5) ** 2
    assert res.w_energy == pytest.approx(-1.5 * math.pi * c2, rel=0.02)
    assert res.v_energy == pytest.approx(-3 * math.pi * c2, rel=0.02)
    assert res.passed
