"""
Rescalings about thin-plane points, the kappa-homogeneous replacement,
blowup ladders and the two blowup-profile fits (regular 3/2 profile and
even harmonic polynomial).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import exact
from .errors import DegenerateBoundaryMass, DegenerateField, DomainExceeded, InadmissibleBall
from .functionals import DEGENERACY_FLOOR, WeissParams
from .grid import (
    BallSpec,
    Grid,
    GridFunction,
    evaluate,
    evaluate_gradient,
    gradient,
    make_grid,
    sphere_mass,
    sphere_points,
    unit_sphere_rule,
)

KINDS = ("almgren", "homogeneous", "almost-homogeneous")
UNIT_EXTENT = 1.25
UNIT_RESOLUTION = 129
ROTATION_THRESHOLD = 0.02
REGULAR_ACCEPT = 0.05
ANGLE_CANDIDATES = 64


def phi(kappa: float, r: float, params: WeissParams) -> float:
    """exp(-(kappa b / alpha) r^alpha) r^kappa."""
    return math.exp(-(kappa * params.b / params.alpha) * r**params.alpha) * r**kappa


@dataclass(frozen=True)
class RescaleSpec:
    kind: str
    center: tuple
    radius: float
    kappa: float | None = None
    params: WeissParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.kind != "almgren" and self.kappa is None:
            raise ValueError(f"{self.kind} rescaling needs kappa")
        if self.kind == "almost-homogeneous":
            if self.params is None:
                raise ValueError("almost-homogeneous rescaling needs WeissParams")
            if not phi(self.kappa, self.radius, self.params) > 0:
                raise ValueError("phi(r) underflows to zero")
        c = tuple(float(x) for x in self.center)
        if c[-1] != 0.0:
            raise ValueError("rescaling center must lie on the thin plane")
        object.__setattr__(self, "center", c)

    def divisor(self, u: GridFunction) -> float:
        r = self.radius
        n = len(self.center)
        if self.kind == "almgren":
            H = sphere_mass(u, BallSpec(self.center, r))
            if H <= DEGENERACY_FLOOR * u.scale**2:
                raise DegenerateBoundaryMass(f"boundary mass {H:.3e} at r={r:g} is degenerate")
            return math.sqrt(H / r ** (n - 1))
        if self.kind == "homogeneous":
            return r**self.kappa
        return phi(self.kappa, r, self.params)


def unit_grid(dim: int, resolution: int = UNIT_RESOLUTION, extent: float = UNIT_EXTENT) -> Grid:
    return make_grid(dim, resolution, extent)


def native_unit_grid(u: GridFunction, spec: RescaleSpec, extent: float = UNIT_EXTENT) -> Grid | None:
    """Unit grid whose nodes are exactly the images of u's nodes, when the
    center is a node and the window is at least 17 nodes wide."""
    g = u.grid
    h = g.h
    idx = [(c + g.extent) / h if k < g.dim - 1 else 0.0 for k, c in enumerate(spec.center)]
    if any(abs(i - round(i)) > 1e-9 for i in idx):
        return None
    half = math.ceil(extent * spec.radius / h - 1e-9)
    res = 2 * half + 1
    if res < 17:
        return None
    return make_grid(g.dim, res, half * h / spec.radius)


def _check_window(u: GridFunction, spec: RescaleSpec, reach: float) -> None:
    c = np.abs(np.asarray(spec.center))
    if np.any(c + reach * spec.radius > u.grid.extent * (1 + 1e-12)):
        raise DomainExceeded(
            f"rescaling window of radius {reach * spec.radius:g} about {spec.center} leaves the grid"
        )


def rescale_field(u: GridFunction, spec: RescaleSpec, resolution: int | None = UNIT_RESOLUTION,
                  extent: float = UNIT_EXTENT) -> GridFunction:
    """x -> u(center + r x) / divisor on a grid covering the unit ball.

    ``resolution=None`` uses the native grid (no interpolation) when possible.
    """
    target = native_unit_grid(u, spec, extent) if resolution is None else None
    if target is None:
        target = unit_grid(u.grid.dim, resolution or UNIT_RESOLUTION, extent)
    _check_window(u, spec, target.extent)
    pts = np.asarray(spec.center) + spec.radius * target.points()
    vals = evaluate(u, pts) / spec.divisor(u)
    return GridFunction(target, vals)


def homogeneous_replacement(u: GridFunction, t: float, kappa: float, center=None) -> GridFunction:
    """(|x|/t)^kappa u(t x/|x|) inside B_t(center), u outside."""
    g = u.grid
    center = np.zeros(g.dim) if center is None else np.asarray(center, dtype=float)
    rel = g.points() - center
    dist = np.linalg.norm(rel, axis=-1)
    inside = dist < t
    vals = np.array(u.values)
    d = dist[inside]
    dirs = np.zeros((d.size, g.dim))
    nz = d > 0
    dirs[nz] = rel[inside][nz] / d[nz, None]
    dirs[~nz, 0] = 1.0
    trace = evaluate(u, center + t * dirs)
    vals[inside] = (d / t) ** kappa * trace
    return GridFunction(g, vals)


def homogeneous_extension_on(f: GridFunction, t: float, kappa: float) -> GridFunction:
    return homogeneous_replacement(f, t, kappa)


def replacement_energy(u: GridFunction, t: float, kappa: float, center=None) -> float:
    """t/(n+2k-2) integral over the sphere of (|grad u|^2 - u_nu^2 + (k/t)^2 u^2).

    This is the energy of the homogeneous replacement computed from the trace
    alone, by a quadrature independent of the ball-energy one.
    """
    n = u.grid.dim
    center = tuple(np.zeros(n)) if center is None else tuple(center)
    pts, nu, w = sphere_points(BallSpec(center, t))
    vals = evaluate(u, pts)
    grad = evaluate_gradient(gradient(u), pts)
    u_nu = np.sum(grad * nu, axis=-1)
    tang = np.sum(grad * grad, axis=-1) - u_nu**2
    return float(t / (n + 2 * kappa - 2) * np.sum(w * (tang + (kappa / t) ** 2 * vals**2)))


# ---------------------------------------------------------------------------
# blowups


def _unit_sphere_values(f, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xi, w = unit_sphere_rule(dim)
    if isinstance(f, GridFunction):
        vals = evaluate(f, xi)
    else:
        vals = np.asarray(f(xi), dtype=float)
    return xi, w, vals


def rotation_metric(f: GridFunction, g: GridFunction) -> float:
    """Integral over the unit sphere of |f - g|."""
    xi, w = unit_sphere_rule(f.grid.dim)
    return float(np.sum(w * np.abs(evaluate(f, xi) - evaluate(g, xi))))


@dataclass
class BlowupResult:
    center: tuple
    kappa: float
    ladder: list
    fields: list = field(repr=False)
    rotation_metrics: list
    mu: list
    threshold: float
    converged: bool

    @property
    def limit_estimate(self) -> GridFunction:
        return self.fields[-1]

    @property
    def metrics_decreasing(self) -> bool:
        m = np.asarray(self.rotation_metrics)
        return bool(np.all(np.diff(m) <= 0))

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "kappa": self.kappa,
            "ladder": list(self.ladder),
            "rotation_metrics": list(self.rotation_metrics),
            "mu": list(self.mu),
            "threshold": self.threshold,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def blowup(u: GridFunction, center, kappa: float, ladder, params: WeissParams,
           resolution: int = UNIT_RESOLUTION, extent: float = UNIT_EXTENT,
           threshold_factor: float = ROTATION_THRESHOLD) -> BlowupResult:
    """Almost-homogeneous rescalings on a common unit grid along a decreasing ladder."""
    ladder = [float(r) for r in ladder]
    if len(ladder) < 3:
        raise ValueError("a blowup ladder needs at least 3 rungs")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("blowup ladder must be strictly decreasing")
    if ladder[0] > params.t0 * (1 + 1e-12):
        raise InadmissibleBall(f"ladder top {ladder[0]:g} exceeds t0 = {params.t0:g}")
    if ladder[-1] < 4.0 * u.grid.h * (1 - 1e-9):
        raise DomainExceeded(f"ladder bottom {ladder[-1]:g} below 4h = {4 * u.grid.h:g}")
    n = u.grid.dim
    fields, mu = [], []
    for r in ladder:
        spec = RescaleSpec("almost-homogeneous", tuple(center), r, kappa, params)
        fields.append(rescale_field(u, spec, resolution, extent))
        H = sphere_mass(u, BallSpec(tuple(center), r))
        mu.append(phi(kappa, r, params) / math.sqrt(max(H, 1e-300) / r ** (n - 1)))
    metrics = [rotation_metric(a, b) for a, b in zip(fields, fields[1:])]
    mass = sphere_mass(fields[-1], BallSpec.at_origin(n, 1.0))
    threshold = threshold_factor * math.sqrt(mass)
    return BlowupResult(tuple(center), kappa, ladder, fields, metrics, mu, threshold, bool(metrics[-1] <= threshold))


# ---------------------------------------------------------------------------
# profile fits


@dataclass
class BlowupFit:
    kind: str
    residual: float
    a: float | None = None
    nu: tuple | None = None
    kappa: float | None = None
    coeffs: tuple | None = None
    lam: float | None = None
    not_in_q: bool = False

    @property
    def accepted(self) -> bool:
        return self.residual <= REGULAR_ACCEPT and not self.not_in_q

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "residual": self.residual}
        if self.kind == "regular":
            d.update(a=self.a, nu=list(self.nu))
        else:
            d.update(kappa=self.kappa, coeffs=list(self.coeffs), lam=self.lam, not_in_q=self.not_in_q)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _field_dim(w, dim: int | None) -> int:
    if isinstance(w, GridFunction):
        return w.grid.dim
    if dim is None:
        raise ValueError("dim is required when fitting a callable")
    return dim


def _check_mass(vals: np.ndarray, weights: np.ndarray, w) -> float:
    mass = float(np.sum(weights * vals**2))
    scale = w.scale if isinstance(w, GridFunction) else max(float(np.max(np.abs(vals))), 1.0)
    if mass <= DEGENERACY_FLOOR * scale**2:
        raise DegenerateField(f"sphere mass {mass:.3e} below the floor")
    return mass


def _profile_basis(xi: np.ndarray, nu_t: np.ndarray) -> np.ndarray:
    s = xi[:, :-1] @ nu_t
    y = np.abs(xi[:, -1])
    rho = np.hypot(s, y)
    p = np.sqrt(np.maximum(rho + s, 0.0) / 2.0)
    q = np.sqrt(np.maximum(rho - s, 0.0) / 2.0)
    return s * p - y * q


def fit_regular_profile(w, dim: int | None = None) -> BlowupFit:
    """Least squares of a Re(x'.nu + i|x_n|)^{3/2} against w on the unit sphere.

    For fixed nu the amplitude is linear; 2D tries both tangential directions,
    3D scans 64 angles and refines the best by bounded scalar minimization.
    """
    n = _field_dim(w, dim)
    xi, wts, vals = _unit_sphere_values(w, n)
    mass = _check_mass(vals, wts, w)

    def solve(nu_t):
        m = _profile_basis(xi, nu_t)
        a = float(np.sum(wts * vals * m) / np.sum(wts * m * m))
        a = max(a, 0.0)
        res = float(np.sum(wts * (vals - a * m) ** 2))
        return a, res

    if n == 2:
        best = min(((solve(np.array([s])), (float(s),)) for s in (1.0, -1.0)), key=lambda t: t[0][1])
        (a, res), nu = best
        nu = nu + (0.0,)
    else:
        angles = 2 * np.pi * np.arange(ANGLE_CANDIDATES) / ANGLE_CANDIDATES
        obj = lambda t: solve(np.array([math.cos(t), math.sin(t)]))[1]
        scores = [obj(t) for t in angles]
        t0 = angles[int(np.argmin(scores))]
        step = 2 * np.pi / ANGLE_CANDIDATES
        opt = minimize_scalar(obj, bounds=(t0 - step, t0 + step), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        t = float(opt.x) % (2 * np.pi)
        a, res = solve(np.array([math.cos(t), math.sin(t)]))
        nu = (math.cos(t), math.sin(t), 0.0)
    return BlowupFit("regular", math.sqrt(res / mass), a=a, nu=nu, kappa=1.5)


def fit_singular_polynomial(w, kappa: int = 2, dim: int | None = None, tol_nonneg: float = 1e-8) -> BlowupFit:
    """Linear least squares over the even harmonic degree-kappa basis."""
    n = _field_dim(w, dim)
    xi, wts, vals = _unit_sphere_values(w, n)
    mass = _check_mass(vals, wts, w)
    basis = exact.q_basis(n, kappa)
    A = np.stack([exact.poly_eval(p, xi) for p in basis], axis=1)
    sw = np.sqrt(wts)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], vals * sw, rcond=None)
    fit = A @ coef
    res = float(np.sum(wts * (vals - fit) ** 2))
    lam = math.sqrt(float(np.sum(wts * fit**2)))
    q = exact.combine(basis, coef)
    qmin = exact.thin_sphere_min(q, n) if q else 0.0
    return BlowupFit(
        "singular",
        math.sqrt(res / mass),
        kappa=float(kappa),
        coeffs=tuple(float(c) for c in coef),
        lam=lam,
        not_in_q=bool(qmin < -tol_nonneg * lam),
    )
