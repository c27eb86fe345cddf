import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signorini_lab import exact
from signorini_lab.errors import DegenerateBoundaryMass, DegenerateField, DomainExceeded, InadmissibleBall
from signorini_lab.functionals import WeissParams, frequency
from signorini_lab.grid import BallSpec, GridFunction, ball_energy, make_grid, sample, sphere_mass, unit_sphere_rule
from signorini_lab.rescale import (
    RescaleSpec,
    blowup,
    fit_regular_profile,
    fit_singular_polynomial,
    homogeneous_replacement,
    phi,
    replacement_energy,
    rescale_field,
)

P = WeissParams(2, 1.9)


@pytest.fixture(scope="module")
def g513():
    return make_grid(2, 513)


def _mixed(g):
    # not homogeneous: a regular profile plus a small quadratic
    reg, q = exact.regular32(), exact.qpoly(2, [1.0])
    return sample(lambda p: reg(p) + 0.3 * q(p) + 0.05, g)


def test_phi_examples():
    p = WeissParams(2, 0.5, 1.5, 2.0)
    assert p.b == 12.0
    assert phi(1.5, 0.01, p) == pytest.approx(math.exp(-3.6) * 1e-3, rel=1e-12)
    assert phi(1.5, 0.01, p) == pytest.approx(2.732e-5, abs=5e-9)
    assert phi(1.5, 1e-12, P) / 1e-18 == pytest.approx(1.0, rel=1e-9)


@given(st.floats(0.01, 0.37), st.sampled_from([1.5, 2.0]))
def test_phi_derivative_identity(r, k):
    d = 1e-6 * r
    fd = (phi(k, r + d, P) - phi(k, r - d, P)) / (2 * d)
    assert fd == pytest.approx(k * phi(k, r, P) * (1 - P.b * r**P.alpha) / r, rel=1e-6)


def test_rescale_spec_validation():
    with pytest.raises(ValueError):
        RescaleSpec("scaled", (0.0, 0.0), 0.1)
    with pytest.raises(ValueError):
        RescaleSpec("homogeneous", (0.0, 0.0), 0.1)
    with pytest.raises(ValueError):
        RescaleSpec("almost-homogeneous", (0.0, 0.0), 0.1, 1.5)
    with pytest.raises(ValueError):
        RescaleSpec("almgren", (0.0, 0.1), 0.1)


@pytest.mark.parametrize("resolution", [None, 129])
def test_almgren_normalisation(g257, resolution):
    u = _mixed(g257)
    for r in (0.1, 0.3, 0.6):
        w = rescale_field(u, RescaleSpec("almgren", (0.0, 0.0), r), resolution)
        assert sphere_mass(w, BallSpec.at_origin(2, 1.0)) == pytest.approx(1.0, abs=1e-3)


def test_almgren_degenerate_and_window(g129):
    z = GridFunction(g129, np.zeros(g129.shape))
    with pytest.raises(DegenerateBoundaryMass):
        rescale_field(z, RescaleSpec("almgren", (0.0, 0.0), 0.3))
    with pytest.raises(DomainExceeded):
        rescale_field(exact.regular32().on(g129), RescaleSpec("homogeneous", (0.5, 0.0), 0.5, 1.5))


@given(st.floats(0.1, 0.7), st.floats(0.15, 0.9))
def test_frequency_covariance(r, rho):
    u = _mixed(_G257)
    w = rescale_field(u, RescaleSpec("almgren", (0.0, 0.0), r), None)
    h = _G257.h
    if rho * r < 4 * h:
        return
    assert frequency(w, ((0.0, 0.0), rho)) == pytest.approx(frequency(u, ((0.0, 0.0), rho * r)), abs=1e-3)


_G257 = make_grid(2, 257)


def test_homogeneous_rescale_is_radius_independent(g513):
    f = exact.regular32().on(g513)
    fields = [rescale_field(f, RescaleSpec("homogeneous", (0.0, 0.0), r, 1.5), None) for r in (0.125, 0.25, 0.5)]
    ref = exact.regular32()
    for w in fields:
        assert np.max(np.abs(w.values - ref.on(w.grid).values)) <= 1e-12
    coarse = rescale_field(f, RescaleSpec("homogeneous", (0.0, 0.0), 0.3, 1.5))
    assert np.max(np.abs(coarse.values - ref.on(coarse.grid).values)) <= 0.01


def test_homogeneous_replacement_examples(g257):
    reg = exact.regular32().on(g257)
    w = homogeneous_replacement(reg, 0.5, 1.5)
    assert np.max(np.abs(w.values - reg.values)) <= 0.01
    c = sample(lambda p: np.full(len(p), 0.7), g257)
    w = homogeneous_replacement(c, 0.5, 2.0)
    want = sample(lambda p: np.where(np.linalg.norm(p, axis=-1) < 0.5,
                                     0.7 * (np.linalg.norm(p, axis=-1) / 0.5) ** 2, 0.7), g257)
    assert np.allclose(w.values, want.values, atol=1e-12)


@pytest.mark.parametrize("t,k", [(0.3, 1.5), (0.5, 1.5), (0.4, 2.0)])
def test_replacement_energy_identity(g513, t, k):
    u = _mixed(g513)
    w = homogeneous_replacement(u, t, k)
    assert ball_energy(w, BallSpec.at_origin(2, t)) == pytest.approx(replacement_energy(u, t, k), rel=0.02)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_replacement_admissibility(a, b, c, d):
    g = make_grid(2, 65)
    u = sample(lambda p: a + b * p[:, 0] ** 2 + c * np.abs(p[:, 1]) + d * p[:, 0] * np.abs(p[:, 1]), g)
    assert np.all(u.thin_trace >= 0)
    w = homogeneous_replacement(u, 0.6, 1.5)
    assert np.all(w.thin_trace >= -1e-14)


def _profile_integral():
    xi, w = unit_sphere_rule(2)
    return float(np.sum(w * np.abs(exact.regular32()(xi))))


def test_blowup_of_exact_profile(g513):
    f = exact.regular32().on(g513)
    ladder = [0.3, 0.15, 0.075, 0.0375]
    res = blowup(f, (0.0, 0.0), 1.5, ladder, P)
    assert res.metrics_decreasing
    # u^phi_r = exp((k b / alpha) r^alpha) times the profile exactly
    c = 1.5 * P.b / P.alpha
    I = _profile_integral()
    for (s, t), m in zip(zip(ladder, ladder[1:]), res.rotation_metrics):
        assert m == pytest.approx((math.exp(c * s**P.alpha) - math.exp(c * t**P.alpha)) * I, rel=0.02)
    lim = res.limit_estimate
    ref = exact.regular32().on(lim.grid).values * math.exp(c * ladder[-1] ** P.alpha)
    assert np.max(np.abs(lim.values - ref)) <= 0.02


def test_blowup_of_exact_q(g513):
    res = blowup(exact.qpoly(2, [1.0]).on(g513), (0.0, 0.0), 2.0, [0.3, 0.15, 0.075], P)
    assert res.metrics_decreasing
    assert fit_singular_polynomial(res.limit_estimate, 2).residual <= 1e-3


def test_blowup_rejects_bad_ladders(g129):
    f = exact.regular32().on(g129)
    with pytest.raises(ValueError):
        blowup(f, (0.0, 0.0), 1.5, [0.3, 0.2], P)
    with pytest.raises(ValueError):
        blowup(f, (0.0, 0.0), 1.5, [0.1, 0.2, 0.05], P)
    with pytest.raises(InadmissibleBall):
        blowup(f, (0.0, 0.0), 1.5, [0.5, 0.2, 0.1], P)
    with pytest.raises(DomainExceeded):
        blowup(f, (0.0, 0.0), 1.5, [0.3, 0.1, 0.01], P)


def test_regular_fit_3d_rotated():
    nu0 = (math.cos(math.pi / 6), math.sin(math.pi / 6))
    fit = fit_regular_profile(exact.regular32(2.0, nu0), dim=3)
    assert fit.a == pytest.approx(2.0, abs=1e-6)
    angle = math.atan2(fit.nu[1], fit.nu[0])
    assert abs(angle - math.pi / 6) <= 1e-4
    assert fit.residual <= 1e-8 and fit.accepted


def test_regular_fit_2d_and_rejections():
    fit = fit_regular_profile(exact.regular32(0.6, (-1.0,)), dim=2)
    assert fit.a == pytest.approx(0.6, abs=1e-6) and fit.nu[0] == -1.0
    assert fit_regular_profile(exact.qpoly(2, [1.0]), dim=2).residual >= 0.2
    with pytest.raises(DegenerateField):
        fit_regular_profile(lambda x: np.zeros(len(x)), dim=2)
    with pytest.raises(ValueError):
        fit_regular_profile(lambda x: np.zeros(len(x)))


def test_singular_fit_examples():
    q = exact.qpoly(2, [1.0])
    fit = fit_singular_polynomial(q, 2, dim=2)
    assert fit.coeffs[0] == pytest.approx(1.0, abs=1e-10)
    assert fit.lam == pytest.approx(math.sqrt(math.pi), rel=0.01)
    assert not fit.not_in_q and fit.accepted
    neg = fit_singular_polynomial(lambda x: -q(x), 2, dim=2)
    assert neg.not_in_q and not neg.accepted
    assert fit_singular_polynomial(exact.regular32(), 2, dim=2).residual >= 0.2
    fit3 = fit_singular_polynomial(exact.qpoly(2, [1.0, 1.0, 0.0], dim=3), 2, dim=3)
    assert fit3.coeffs == pytest.approx((1.0, 1.0, 0.0), abs=1e-10)


LIBRARY = [
    exact.regular32(),
    exact.regular32(0.6, (-1.0,)),
    exact.regular32(2.0, (math.cos(math.pi / 6), math.sin(math.pi / 6))),
    exact.qpoly(2, [1.0]),
    exact.qpoly(2, [1.0, 0.0, 0.0], dim=3),
    exact.qpoly(2, [1.0, 1.0, 0.0], dim=3),
    exact.qpoly(4, [1.0]),
    exact.constant(0.7),
    exact.constant(1.0, dim=3),
    exact.full_contact(2.0),
]


@pytest.mark.parametrize("sol", LIBRARY, ids=lambda s: s.name)
def test_fit_exclusivity(sol):
    reg = fit_regular_profile(sol, dim=sol.dim)
    k = int(sol.kappa) if sol.kind == "qpoly" else 2
    sing = fit_singular_polynomial(sol, k, dim=sol.dim)
    assert reg.accepted == (sol.kind == "regular32")
    assert sing.accepted == (sol.kind == "qpoly")
