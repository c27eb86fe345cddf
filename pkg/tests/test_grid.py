import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signorini_lab import exact
from signorini_lab.errors import EvenResolution, InadmissibleBall, NonFiniteField, OutsideDomain, ResolutionTooSmall
from signorini_lab.grid import (
    BallSpec,
    GridFunction,
    ball_energy,
    ball_volume,
    check_ball,
    evaluate,
    evaluate_gradient,
    gradient,
    make_grid,
    read_field,
    sample,
    sphere_flux_deficit,
    sphere_mass,
    write_field,
)
from signorini_lab.functionals import WeissParams


def test_make_grid_spacing():
    assert make_grid(2, 17, 1.0).h == pytest.approx(0.125, abs=0)
    assert make_grid(3, 65, 1.0).h == pytest.approx(0.03125, abs=0)
    g = make_grid(2, 17)
    assert g.shape == (9, 17)
    assert g.thin_points()[:, -1].max() == 0.0


def test_make_grid_rejects():
    with pytest.raises(EvenResolution):
        make_grid(2, 16, 1.0)
    with pytest.raises(ResolutionTooSmall):
        make_grid(2, 15, 1.0)


def test_sample_examples():
    g = make_grid(2, 17)
    one = sample(lambda p: np.ones(len(p)), g)
    assert np.all(one.values == 1.0)
    reg = exact.regular32().on(g)
    h = g.h
    assert reg(np.array([h, 0.0])) == pytest.approx(h**1.5, rel=1e-14)
    assert reg(np.array([-h, 0.0])) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(NonFiniteField):
        sample(lambda p: np.full(len(p), np.nan), g)


def test_evaluate_examples():
    g = make_grid(2, 33)
    f = sample(lambda p: np.sin(3 * p[:, 0]) + p[:, 1] ** 2, g)
    pts = g.points()
    assert evaluate(f, pts[5, 7]) == f.values[5, 7]
    lin = sample(lambda p: p[:, 0], g)
    centre = pts[3, 4] + 0.5 * g.h
    assert evaluate(lin, centre) == pytest.approx(centre[0], abs=1e-14)
    with pytest.raises(OutsideDomain):
        evaluate(f, np.array([1.5, 0.0]))


@given(st.floats(-0.99, 0.99), st.floats(0.0, 0.99))
def test_even_symmetry(x1, xn):
    g = make_grid(2, 33)
    f = sample(lambda p: np.cos(2 * p[:, 0]) * (1 + p[:, 1]) + p[:, 1] ** 3, g)
    assert evaluate(f, np.array([x1, -xn])) == evaluate(f, np.array([x1, xn]))


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_multilinear_reproduces_linear_3d(x1, x2, x3):
    g = make_grid(3, 17)
    f = sample(lambda p: 1 + 2 * p[:, 0] - p[:, 1] + 0.5 * np.abs(p[:, 2]), g)
    assert evaluate(f, np.array([x1, x2, x3])) == pytest.approx(1 + 2 * x1 - x2 + 0.5 * abs(x3), abs=1e-12)


def test_gradient_examples():
    g = make_grid(2, 33)
    grad = gradient(sample(lambda p: p[:, 0], g))
    assert np.allclose(grad.components[0], 1.0, atol=1e-12)
    assert np.allclose(grad.components[1], 0.0, atol=1e-12)
    grad = gradient(sample(lambda p: np.full(len(p), 3.0), g))
    assert np.all(grad.components == 0.0)


@pytest.mark.parametrize("res", [129, 257, 513])
def test_thin_normal_derivative_of_regular_profile(res):
    # analytic one-sided derivative is -(3/2)|x1|^{1/2} on x1 < 0
    g = make_grid(2, res)
    grad = gradient(exact.regular32().on(g))
    val = evaluate_gradient(grad, np.array([-0.25, 0.0]))[1]
    assert val == pytest.approx(-0.75, abs=4 * g.h)


def test_thin_gradient_is_one_sided():
    g = make_grid(2, 33)
    f = sample(lambda p: p[:, 1] ** 2 + p[:, 0], g)
    vals = np.array(f.values)
    vals[3:] += 17.0
    a = gradient(f).components[1][0]
    b = gradient(GridFunction(g, vals)).components[1][0]
    assert np.array_equal(a, b)


def test_ball_energy_examples(g257):
    ball = BallSpec.at_origin(2, 0.5)
    assert ball_energy(sample(lambda p: np.ones(len(p)), g257), ball) == 0.0
    reg = exact.regular32().on(g257)
    assert ball_energy(reg, ball) == pytest.approx(1.5 * math.pi * 0.5**3, rel=0.02)
    q = exact.qpoly(2, [1.0]).on(g257)
    assert ball_energy(q, ball) == pytest.approx(2 * math.pi * 0.5**4, rel=0.02)


def test_sphere_mass_examples(g257):
    ball = BallSpec.at_origin(2, 0.5)
    c = sample(lambda p: np.full(len(p), 1.7), g257)
    assert sphere_mass(c, ball) == pytest.approx(1.7**2 * 2 * math.pi * 0.5, rel=1e-12)
    reg = exact.regular32().on(g257)
    assert sphere_mass(reg, ball) == pytest.approx(math.pi * 0.5**4, rel=0.01)
    q = exact.qpoly(2, [1.0]).on(g257)
    assert sphere_mass(q, ball) == pytest.approx(math.pi * 0.5**5, rel=0.01)


def test_sphere_flux_deficit_examples(g257):
    reg = exact.regular32().on(g257)
    r = 0.25
    ball = BallSpec.at_origin(2, r)
    H = sphere_mass(reg, ball)
    # b = 0, matching kappa: relative to the size of either term
    assert sphere_flux_deficit(reg, ball, 1.5, 0.0, 1.0) <= 1e-3 * (1.5 / r) ** 2 * H
    c = sample(lambda p: np.full(len(p), 2.0), g257)
    want = 9 / 4 * 4.0 / r**2 * 2 * math.pi * r
    assert sphere_flux_deficit(c, ball, 1.5, 0.0, 1.0) == pytest.approx(want, rel=1e-10)
    P = WeissParams(2, 1.9)
    want = 1.5**2 * P.b**2 * r ** (2 * P.alpha - 2) * H
    assert sphere_flux_deficit(reg, ball, 1.5, P.b, P.alpha) == pytest.approx(want, rel=0.05)


@given(st.floats(8 * 2 / 256, 0.5))
def test_quadrature_consistency(r):
    g = make_grid(2, 257)
    for sol in (exact.regular32(), exact.qpoly(2, [1.0])):
        f = sol.on(g)
        M = exact.oracle_sphere_mass(sol, 1.0)
        k = sol.kappa
        ball = BallSpec.at_origin(2, r)
        assert sphere_mass(f, ball) / r ** (2 + 2 * k - 1) == pytest.approx(M, rel=0.02)
        assert ball_energy(f, ball) / r ** (2 + 2 * k - 2) == pytest.approx(k * M, rel=0.02)


@pytest.mark.parametrize("sol", [exact.regular32(), exact.qpoly(2, [1.0])], ids=["regular32", "qpoly"])
def test_refinement_convergence(sol):
    ball = BallSpec.at_origin(2, 0.5)
    D_ref = exact.oracle_ball_energy(sol, 0.5)
    H_ref = exact.oracle_sphere_mass(sol, 0.5)
    errD, errH = [], []
    for res in (65, 129, 257):
        f = sol.on(make_grid(2, res))
        errD.append(abs(ball_energy(f, ball) - D_ref))
        errH.append(abs(sphere_mass(f, ball) - H_ref))
    for errs in (errD, errH):
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[1] >= 2 and errs[1] / errs[2] >= 2


def test_ball_volume_converges():
    for dim, res in ((2, 129), (3, 65)):
        g = make_grid(dim, res)
        r = 0.41
        exact_v = math.pi * r**2 if dim == 2 else 4 / 3 * math.pi * r**3
        assert ball_volume(g, BallSpec.at_origin(dim, r)) == pytest.approx(exact_v, rel=1e-4)


def test_ball_energy_3d():
    g = make_grid(3, 65)
    sol = exact.qpoly(2, [1.0, 1.0, 0.0], dim=3)
    got = ball_energy(sol.on(g), BallSpec.at_origin(3, 0.5))
    assert got == pytest.approx(exact.oracle_ball_energy(sol, 0.5), rel=0.02)


def test_check_ball():
    g = make_grid(2, 65)
    check_ball(g, BallSpec.at_origin(2, 0.5))
    with pytest.raises(InadmissibleBall):
        check_ball(g, BallSpec.at_origin(2, 3 * g.h))
    with pytest.raises(InadmissibleBall):
        check_ball(g, BallSpec((0.5, 0.0), 0.5))
    with pytest.raises(InadmissibleBall):
        BallSpec((0.0, 0.1), 0.3)


def test_field_dump_roundtrip(tmp_path, g129):
    f = exact.regular32().on(g129)
    jpath, bpath = write_field(f, tmp_path / "u")
    meta = json.loads(jpath.read_text())
    assert meta["value_count"] == f.values.size and meta["symmetry"] == "even"
    assert bpath.stat().st_size == 8 * f.values.size
    back = read_field(tmp_path / "u.json")
    assert back.grid == f.grid
    assert back.values.tobytes() == f.values.tobytes()


def test_gridfunction_is_immutable(g129):
    f = exact.regular32().on(g129)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
