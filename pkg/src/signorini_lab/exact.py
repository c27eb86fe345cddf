"""
Closed-form global solutions of the thin obstacle problem and reference
integrals computed directly from their evaluators (no grid).

Library members:

* ``regular32(a, nu)``  a Re(x'.nu + i|x_n|)^{3/2}, the regular blowup profile
* ``qpoly(kappa, coeffs)``  even harmonic homogeneous polynomials, nonnegative
  on the thin plane
* ``constant(c)``  c >= 0
* ``full_contact(c)``  -c|x_n|, contact on the whole thin plane
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NotInQ
from .grid import Grid, GridFunction, sample, unit_sphere_rule

# exponent tuples are over the tangential variables (x_1, ..., x_{n-1});
# orders follow the basis tables used by the singular blowup fit
_BASIS_MONOMIALS = {
    (2, 2): [(2,)],
    (2, 4): [(4,)],
    (3, 2): [(2, 0), (0, 2), (1, 1)],
    (3, 4): [(4, 0), (0, 4), (3, 1), (1, 3), (2, 2)],
}


def _poly_laplacian(poly: dict, variables: int) -> dict:
    out: dict = {}
    for exps, c in poly.items():
        for v in range(variables):
            e = exps[v]
            if e >= 2:
                ne = list(exps)
                ne[v] -= 2
                ne = tuple(ne)
                out[ne] = out.get(ne, 0.0) + c * e * (e - 1)
    return {k: v for k, v in out.items() if v != 0.0}


def even_harmonic_extension(tangential: dict, dim: int) -> dict:
    """Even-in-x_n harmonic polynomial whose thin-plane trace is ``tangential``.

    p(x', x_n) = sum_k (-1)^k x_n^{2k} / (2k)! (Delta')^k m(x').
    Returned keys are full exponent tuples (x_1, ..., x_n).
    """
    out: dict = {}
    term = dict(tangential)
    k = 0
    while term:
        coef = (-1) ** k / math.factorial(2 * k)
        for exps, c in term.items():
            key = tuple(exps) + (2 * k,)
            out[key] = out.get(key, 0.0) + coef * c
        term = _poly_laplacian(term, dim - 1)
        k += 1
    return {k_: v for k_, v in out.items() if v != 0.0}


def q_basis(dim: int, kappa: int) -> list[dict]:
    """Basis of Q-class candidates: even harmonic homogeneous polynomials."""
    try:
        monos = _BASIS_MONOMIALS[(dim, int(kappa))]
    except KeyError:
        raise NotImplementedError(f"no polynomial basis tabulated for dim={dim}, kappa={kappa}") from None
    return [even_harmonic_extension({m: 1.0}, dim) for m in monos]


def poly_eval(poly: dict, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    out = np.zeros(pts.shape[:-1])
    for exps, c in poly.items():
        term = np.full(pts.shape[:-1], c)
        for k, e in enumerate(exps):
            if e:
                term = term * pts[..., k] ** e
        out += term
    return out


def poly_grad(poly: dict, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    dim = pts.shape[-1]
    out = np.zeros(pts.shape)
    for v in range(dim):
        d = {}
        for exps, c in poly.items():
            if exps[v]:
                ne = list(exps)
                ne[v] -= 1
                d[tuple(ne)] = d.get(tuple(ne), 0.0) + c * exps[v]
        out[..., v] = poly_eval(d, pts) if d else 0.0
    return out


def combine(polys: list[dict], coeffs) -> dict:
    out: dict = {}
    for p, c in zip(polys, coeffs):
        for k, v in p.items():
            out[k] = out.get(k, 0.0) + c * v
    return {k: v for k, v in out.items() if v != 0.0}


@dataclass(frozen=True, eq=False)
class ExactSolution:
    """A named closed-form solution with its gradient and homogeneity degree."""

    kind: str
    dim: int
    kappa: float
    params: dict
    value: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    grad: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    homogeneous: bool = True

    def __call__(self, pts):
        return self.value(np.asarray(pts, dtype=float))

    def normal_derivative_plus(self, pts: np.ndarray) -> np.ndarray:
        """Analytic one-sided x_n derivative from above at thin-plane points."""
        pts = np.array(pts, dtype=float)
        pts[..., -1] = 0.0
        return self.grad(pts)[..., -1]

    def on(self, grid: Grid) -> GridFunction:
        return sample(self.value, grid)

    @property
    def name(self) -> str:
        if self.kind == "regular32":
            nu = self.params["nu"]
            if self.dim == 2:
                nu_txt = "0deg" if nu[0] > 0 else "180deg"
            else:
                nu_txt = "/".join(f"{x:.17g}" for x in nu)
            return f"regular32:a={self.params['a']:.17g},nu={nu_txt}"
        if self.kind == "qpoly":
            k = "" if self.kappa == 2 else f"kappa={self.kappa:g},"
            return f"qpoly{self.dim}d:{k}" + "/".join(f"{x:.17g}" for x in self.params["coeffs"])
        return f"{self.kind}{self.dim}d:c={self.params['c']:.17g}"


def _unit_tangential(nu, dim: int) -> np.ndarray:
    nu = np.asarray(nu, dtype=float).ravel()
    if nu.size == dim:
        if nu[-1] != 0.0:
            raise ValueError("nu must be tangential (zero x_n component)")
        nu = nu[:-1]
    if nu.size != dim - 1:
        raise ValueError(f"nu must have {dim - 1} tangential components")
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise ValueError(f"nu must be a unit vector, |nu|={np.linalg.norm(nu)}")
    return nu


def regular32(a: float = 1.0, nu=(1.0,), dim: int | None = None) -> ExactSolution:
    """a Re(x'.nu + i|x_n|)^{3/2}.

    Written through the half-angle square root so the trace is exact on the
    thin plane: with z = s + iy, sqrt(z) = p + iq, p = sqrt((rho+s)/2),
    q = sqrt((rho-s)/2), Re z^{3/2} = s p - y q.
    """
    nu = np.asarray(nu, dtype=float).ravel()
    if dim is None:
        dim = nu.size + 1
    nu_t = _unit_tangential(nu, dim)
    if not a > 0:
        raise ValueError("amplitude a must be positive")

    def parts(pts):
        pts = np.asarray(pts, dtype=float)
        s = pts[..., :-1] @ nu_t
        y = np.abs(pts[..., -1])
        rho = np.hypot(s, y)
        p = np.sqrt(np.maximum(rho + s, 0.0) / 2.0)
        q = np.sqrt(np.maximum(rho - s, 0.0) / 2.0)
        return s, y, p, q

    def value(pts):
        s, y, p, q = parts(pts)
        return a * (s * p - y * q)

    def grad(pts):
        pts = np.asarray(pts, dtype=float)
        s, y, p, q = parts(pts)
        ds = 1.5 * a * p
        dy = -1.5 * a * q
        out = np.empty(pts.shape)
        out[..., :-1] = ds[..., None] * nu_t
        sign = np.where(pts[..., -1] < 0, -1.0, 1.0)
        out[..., -1] = sign * dy
        return out

    return ExactSolution("regular32", dim, 1.5, {"a": float(a), "nu": tuple(nu_t)}, value, grad)


def qpoly(kappa: int, coeffs, dim: int = 2, check: bool = True) -> ExactSolution:
    """Polynomial from the Q_kappa basis with the given coefficients."""
    basis = q_basis(dim, kappa)
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if coeffs.size != len(basis):
        raise ValueError(f"expected {len(basis)} coefficients for dim={dim}, kappa={kappa}")
    poly = combine(basis, coeffs)
    if check:
        m = thin_sphere_min(poly, dim)
        scale = max(float(np.max(np.abs(coeffs))), 1e-300)
        if m < -1e-12 * scale:
            raise NotInQ(f"polynomial is negative on the thin unit sphere (min {m:.3g})")
    return ExactSolution(
        "qpoly",
        dim,
        float(kappa),
        {"coeffs": tuple(float(c) for c in coeffs), "poly": poly},
        lambda pts: poly_eval(poly, pts),
        lambda pts: poly_grad(poly, pts),
    )


def thin_sphere_points(dim: int, count: int = 720) -> np.ndarray:
    if dim == 2:
        return np.array([[1.0, 0.0], [-1.0, 0.0]])
    t = np.arange(count) * 2 * np.pi / count
    return np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=-1)


def thin_sphere_min(poly: dict, dim: int) -> float:
    return float(np.min(poly_eval(poly, thin_sphere_points(dim))))


def constant(c: float, dim: int = 2) -> ExactSolution:
    if c < 0:
        raise ValueError("constant solutions must be nonnegative")
    return ExactSolution(
        "constant",
        dim,
        0.0,
        {"c": float(c)},
        lambda pts: np.full(np.asarray(pts).shape[:-1], float(c)),
        lambda pts: np.zeros(np.asarray(pts).shape),
    )


def full_contact(c: float, dim: int = 2) -> ExactSolution:
    """-c|x_n|: zero on the thin plane with constant outward flux."""
    if not c > 0:
        raise ValueError("full-contact slope must be positive")

    def grad(pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape)
        out[..., -1] = np.where(pts[..., -1] < 0, c, -c)
        return out

    return ExactSolution(
        "full_contact",
        dim,
        1.0,
        {"c": float(c)},
        lambda pts: -c * np.abs(np.asarray(pts, dtype=float)[..., -1]),
        grad,
    )


_NAME_RE = re.compile(r"^(?P<kind>[a-z_]+(?:32)?)(?P<dim>[23]d)?(?::(?P<args>.*))?$")


def _parse_angle(text: str) -> float:
    text = text.strip()
    if text.endswith("deg"):
        return math.radians(float(text[:-3]))
    return float(text)


def from_name(name: str, dim: int = 2) -> ExactSolution:
    """Parse names such as ``regular32:a=1,nu=30deg`` or ``qpoly2d:1``.

    ``nu`` is an angle in the tangent plane (3D) or a sign (2D), or an explicit
    vector ``nu=0.6/0.8``.
    """
    m = _NAME_RE.match(name.strip())
    if not m:
        raise ConfigError(f"cannot parse exact-solution name {name!r}")
    kind = m.group("kind")
    if m.group("dim"):
        dim = int(m.group("dim")[0])
    args = m.group("args") or ""
    if kind == "qpoly":
        parts = [p for p in re.split(r"[,/ ]+", args) if p]
        kappa = 2
        coeffs = []
        for p in parts:
            if p.startswith("kappa="):
                kappa = int(p.split("=", 1)[1])
            else:
                coeffs.append(float(p))
        return qpoly(kappa, coeffs or [1.0] * len(q_basis(dim, kappa)), dim=dim)
    kw = {}
    for p in [p for p in args.split(",") if p.strip()]:
        if "=" not in p:
            raise ConfigError(f"expected key=value in {name!r}, got {p!r}")
        k, v = p.split("=", 1)
        kw[k.strip()] = v.strip()
    if kind == "regular32":
        a = float(kw.pop("a", 1.0))
        nu_txt = kw.pop("nu", "0deg")
        if "/" in nu_txt:
            nu = np.array([float(x) for x in nu_txt.split("/")])
            dim = nu.size + 1
        else:
            ang = _parse_angle(nu_txt)
            nu = np.array([np.cos(ang), np.sin(ang)]) if dim == 3 else np.array([np.sign(np.cos(ang)) or 1.0])
        if kw:
            raise ConfigError(f"unknown parameters {sorted(kw)} for regular32")
        return regular32(a, nu, dim=dim)
    if kind in ("constant", "full_contact"):
        c = float(kw.pop("c", 1.0))
        if kw:
            raise ConfigError(f"unknown parameters {sorted(kw)} for {kind}")
        return (constant if kind == "constant" else full_contact)(c, dim=dim)
    raise ConfigError(f"unknown exact-solution kind {kind!r}")


# ---------------------------------------------------------------------------
# reference integrals


def _sphere_rule(dim: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    if dim == 2:
        t = np.arange(order) * 2 * np.pi / order
        return np.stack([np.cos(t), np.sin(t)], axis=-1), np.full(order, 2 * np.pi / order)
    n_lat, n_lon = order
    mu, wmu = np.polynomial.legendre.leggauss(n_lat // 2)
    mu = 0.5 * (mu + 1.0)
    wmu = 0.5 * wmu
    ph = np.arange(n_lon) * 2 * np.pi / n_lon
    M, P = np.meshgrid(mu, ph, indexing="ij")
    s = np.sqrt(1 - M**2)
    nodes = np.stack([s * np.cos(P), s * np.sin(P), M], axis=-1).reshape(-1, 3)
    w = 2.0 * np.outer(wmu, np.full(n_lon, 2 * np.pi / n_lon)).ravel()
    return nodes, w


def _default_order(dim: int):
    return 2048 if dim == 2 else (512, 1024)


def oracle_sphere_mass(sol: ExactSolution, r: float, order=None) -> float:
    """Reference integral of sol^2 over the sphere of radius r at the origin."""
    order = order or _default_order(sol.dim)
    if sol.dim == 2 and order < 2048 or sol.dim == 3 and (order[0] < 512 or order[1] < 1024):
        raise ValueError("oracle quadrature order below the reference minimum")
    xi, w = _sphere_rule(sol.dim, order)
    v = sol(r * xi)
    return float(np.sum(w * v * v) * r ** (sol.dim - 1))


def shell_ball_energy(sol: ExactSolution, r: float, order=None, radial: int = 64) -> float:
    """Ball energy by Gauss-Legendre shells of sphere quadrature of |grad u|^2."""
    order = order or _default_order(sol.dim)
    xi, w = _sphere_rule(sol.dim, order)
    s, ws = np.polynomial.legendre.leggauss(radial)
    s = 0.5 * r * (s + 1.0)
    ws = 0.5 * r * ws
    total = 0.0
    for rad, wr in zip(s, ws):
        g = sol.grad(rad * xi)
        total += wr * rad ** (sol.dim - 1) * np.sum(w * np.sum(g * g, axis=-1))
    return float(total)


def oracle_ball_energy(sol: ExactSolution, r: float, order=None) -> float:
    """D(r) = kappa r^{n+2kappa-2} H(1) for homogeneous members, shells otherwise."""
    if not sol.homogeneous:
        return shell_ball_energy(sol, r, order)
    if sol.kappa == 0:
        return 0.0
    return sol.kappa * r ** (sol.dim + 2 * sol.kappa - 2) * oracle_sphere_mass(sol, 1.0, order)
