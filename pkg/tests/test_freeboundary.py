import math

import numpy as np
import pytest

from signorini_lab import exact
from signorini_lab.errors import InadmissibleBall, NoCrossingInWindow, NotRegularSeed, NotSingularFit
from signorini_lab.freeboundary import (
    Classification,
    ClassificationThresholds,
    band_width,
    classifications_from_csv,
    classifications_to_csv,
    classify_point,
    coincidence_density,
    coincidence_set,
    contact_threshold,
    regular_graph_fit,
    singular_dimension,
    snap_center,
)
from signorini_lab.functionals import WeissParams
from signorini_lab.grid import make_grid, sample
from signorini_lab.rescale import BlowupFit, fit_regular_profile, fit_singular_polynomial
from signorini_lab.solver import BoundaryData, solve_signorini

P = WeissParams(2, 1.9, kappa0=3.0)


@pytest.fixture(scope="module")
def g513():
    return make_grid(2, 513)


@pytest.fixture(scope="module")
def solved513(g513):
    u, _ = solve_signorini(g513, BoundaryData.from_exact(exact.regular32(), g513))
    return u


def test_contact_threshold_policies(reg257):
    h = reg257.grid.h
    assert contact_threshold(reg257) == pytest.approx(0.5 * reg257.scale * h**1.5)
    assert contact_threshold(reg257, "absolute", tau=0.1) == 0.1
    with pytest.raises(ValueError):
        contact_threshold(reg257, "absolute")
    with pytest.raises(ValueError):
        contact_threshold(reg257, "relative")


def test_coincidence_set_of_regular_profile(reg257):
    fb = coincidence_set(reg257)
    x1 = reg257.grid.thin_points()[:, 0]
    assert np.all(fb.lambda_mask[x1 <= 0])
    assert not np.any(fb.lambda_mask[x1 > 2 * reg257.grid.h])
    assert len(fb.gamma_points) == 1
    assert abs(fb.gamma_points[0, 0]) <= reg257.grid.h


def test_coincidence_set_of_q_and_constant(q257, g257):
    fb = coincidence_set(q257)
    pts = fb.contact_points
    assert len(pts) >= 1 and np.all(np.abs(pts[:, 0]) <= band_width(fb, q257) + 1e-12)
    one = coincidence_set(sample(lambda p: np.ones(len(p)), g257))
    assert not one.lambda_mask.any() and len(one.gamma_points) == 0


@pytest.mark.parametrize("r", [0.1, 0.3, 0.5])
def test_densities(reg257, q257, g257, r):
    h = g257.h
    assert coincidence_density(coincidence_set(reg257), (0.0, 0.0), r) == pytest.approx(0.5, abs=2 * h / r)
    # q touches zero only in the threshold band: a handful of cells over the disk
    fq = coincidence_set(q257)
    cells = int(fq.lambda_mask.sum())
    assert cells <= 2 * math.ceil(band_width(fq, q257) / h) + 1
    assert coincidence_density(fq, (0.0, 0.0), r) <= cells * h / (2 * r) + 1e-12
    full = exact.full_contact(1.0).on(g257)
    # cut cells are sampled at h/8 at each end of the disk
    assert coincidence_density(coincidence_set(full), (0.0, 0.0), r) == pytest.approx(1.0, abs=h / (4 * r))


def test_density_rejects_bad_disks(reg257):
    fb = coincidence_set(reg257)
    with pytest.raises(InadmissibleBall):
        coincidence_density(fb, (0.8, 0.0), 0.3)
    with pytest.raises(InadmissibleBall):
        coincidence_density(fb, (0.0, 0.0), reg257.grid.h / 2)


def test_density_of_q_decreases(g513):
    fb = coincidence_set(exact.qpoly(2, [1.0]).on(g513))
    d = [coincidence_density(fb, (0.0, 0.0), r) for r in (0.05, 0.1, 0.2, 0.4)]
    assert all(a >= b for a, b in zip(d, d[1:]))


def test_snap_center(reg257):
    fb = coincidence_set(reg257)
    assert snap_center(fb, (0.3, 0.0)) == (0.0, 0.0)
    with pytest.raises(ValueError):
        snap_center(fb, (0.0, 0.1))


def test_classify_exact_regular(g513):
    c = classify_point(exact.regular32().on(g513), (0.0, 0.0), P)
    assert c.verdict == "Regular" and c.label == "Regular"
    assert c.nhat_limit == pytest.approx(1.5, abs=0.05)
    assert c.fit.a == pytest.approx(1.0, abs=0.05) and c.fit.nu[0] == 1.0


def test_classify_exact_q(g513):
    c = classify_point(exact.qpoly(2, [1.0]).on(g513), (0.0, 0.0), P)
    assert c.label == "Singular(2)"
    assert c.density <= 0.05
    assert c.fit.coeffs[0] == pytest.approx(1.0, abs=0.05)
    d = [v for _, v in c.density_trend]
    assert all(a <= b + 1e-12 for a, b in zip(d, d[1:])) or d[0] >= d[-1]


def test_classify_solved_regular(solved513):
    c = classify_point(solved513, (0.0, 0.0), P)
    assert c.verdict == "Regular"
    assert 1.45 <= c.nhat_limit <= 1.55


def test_classify_too_coarse_is_unresolved(reg257):
    c = classify_point(reg257, (0.0, 0.0), P)
    assert c.verdict == "Unresolved" and c.fit is None and c.notes


def test_gap_enforcement(g513, solved513):
    th = ClassificationThresholds()
    fields = [exact.regular32().on(g513), exact.qpoly(2, [1.0]).on(g513), solved513]
    for f in fields:
        c = classify_point(f, (0.0, 0.0), P)
        if c.quality <= th.quality_max:
            assert not (1.5 + th.gap < c.nhat_limit < 2.0 - th.gap)


def test_mask_stability(g257):
    for sol in (exact.regular32(), exact.regular32(0.6, (-1.0,))):
        u = sol.on(g257)
        a = coincidence_set(u).gamma_points
        b = coincidence_set(u, c_tau=0.25).gamma_points
        assert a.shape == b.shape
        assert np.max(np.abs(a - b)) <= 2 * g257.h


def test_classification_csv_roundtrip(g513):
    items = [classify_point(exact.regular32().on(g513), (0.0, 0.0), P)]
    text = classifications_to_csv(items, 2)
    rows = classifications_from_csv(text)
    assert rows[0]["verdict"] == "Regular"
    assert rows[0]["nhat_limit"] == items[0].nhat_limit
    assert rows[0]["residual"] == items[0].fit.residual
    assert classifications_to_csv(items, 2) == text


def _regular_seed(nu):
    fit = BlowupFit("regular", 0.0, a=1.0, nu=nu, kappa=1.5)
    return Classification("Regular", 1.5, 1.5, 0.0, 0.5, [], (0.0, 0.0, 0.0), fit)


def test_graph_fit_3d_flat():
    g = make_grid(3, 65)
    u = exact.regular32(1.0, (1.0, 0.0)).on(g)
    gf = regular_graph_fit(u, _regular_seed((1.0, 0.0, 0.0)), 0.4)
    assert len(gf.g) >= 20
    assert np.max(np.abs(gf.g)) <= g.h
    assert np.allclose(gf.normals[:, :2], [1.0, 0.0], atol=1e-3)
    for table in gf.holder.values():
        assert max(table.values()) <= 1.0


def test_graph_fit_3d_rotated():
    g = make_grid(3, 65)
    ang = math.pi / 6
    u = exact.regular32(1.0, (math.cos(ang), math.sin(ang))).on(g)
    # seeded with the unrotated normal, the crossing offsets trace a line of slope tan(30 deg)
    gf = regular_graph_fit(u, _regular_seed((1.0, 0.0, 0.0)), 0.3)
    slope = np.polyfit(gf.tangential, gf.g, 1)[0]
    assert slope == pytest.approx(-math.tan(ang), abs=g.h / 0.3 + 0.02)
    # after aligning with the fitted normal the graph is flat
    aligned = regular_graph_fit(u, _regular_seed((math.cos(ang), math.sin(ang), 0.0)), 0.3)
    assert np.max(np.abs(aligned.g)) <= g.h


def test_graph_fit_errors(g129):
    q = Classification("Singular", 2.0, 2.0, 0.0, 0.0, [], (0.0, 0.0), None)
    with pytest.raises(NotRegularSeed):
        regular_graph_fit(exact.regular32().on(g129), q, 0.3)
    g = make_grid(3, 33)
    one = sample(lambda p: np.ones(len(p)), g)
    with pytest.raises(NoCrossingInWindow):
        regular_graph_fit(one, _regular_seed((1.0, 0.0, 0.0)), 0.3)


def test_graph_fit_2d_returns_point(g129):
    seed = Classification("Regular", 1.5, 1.5, 0.0, 0.5, [], (0.0, 0.0),
                          fit_regular_profile(exact.regular32(), dim=2))
    gf = regular_graph_fit(exact.regular32().on(g129), seed, 0.3)
    assert gf.points.shape == (1, 2)


@pytest.mark.parametrize("sol,dim,want", [
    (exact.qpoly(2, [1.0]), 2, 0),
    (exact.qpoly(2, [1.0, 0.0, 0.0], dim=3), 3, 1),
    (exact.qpoly(2, [0.0, 0.0, 1.0], dim=3, check=False), 3, 0),
])
def test_singular_dimension(sol, dim, want):
    fit = fit_singular_polynomial(sol, 2, dim=dim)
    assert singular_dimension(fit, dim) == want


def test_singular_dimension_errors():
    with pytest.raises(NotSingularFit):
        singular_dimension(fit_regular_profile(exact.regular32(), dim=2), 2)
    neg = fit_singular_polynomial(lambda x: -exact.qpoly(2, [1.0])(x), 2, dim=2)
    assert singular_dimension(neg, 2) == 0
    with pytest.raises(NotSingularFit):
        singular_dimension(neg, 2, require_in_q=True)
