"""
Projected SOR for the discrete thin obstacle problem on the half-domain grid.

The unknowns are the free nodes of the upper half. A thin-plane node sees its
reflected lower neighbour as a second copy of the node above, so the row is
the even-reflection stencil and the constraint u >= 0 is a projection applied
after each relaxation step. The same kernel runs the unconstrained harmonic
solve (no projection), the drift variant (nonsymmetric rows) and the weighted
variant (harmonic-mean face coefficients).

Every solve is sequential and the node ordering is fixed before sweeping, so
results are bit-reproducible.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numba
import numpy as np

from .errors import InadmissibleBoundary, NonConvergence, NonFiniteField
from .grid import BallSpec, Grid, GridFunction, check_ball, evaluate, make_grid

ORDERINGS = ("red-black", "lexicographic")
NEST_MIN_RESOLUTION = 33


class PecletWarning(UserWarning):
    """Cell Peclet number above 1: the drift stencil fell back to upwinding."""


def optimal_relaxation(resolution: int, damping: float = 1.0) -> float:
    """Model-problem optimum 2 / (1 + sin(pi h / 2L)) for the reflected cube.

    ``damping`` < 1 scales the Jacobi spectral radius cos(pi h / 2L); central
    convection-diffusion with cell Peclet number P along an axis contributes
    sqrt(1 - P^2) for that axis, which keeps SOR from diverging under drift.
    """
    if damping >= 1.0:
        return 2.0 / (1.0 + math.sin(math.pi / (resolution - 1)))
    rho = math.cos(math.pi / (resolution - 1)) * damping
    return 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))


@dataclass(frozen=True)
class SolveOptions:
    """Relaxation settings. Tolerances are relative to the boundary-data scale.

    ``relaxation=None`` picks the model-problem optimum for the grid and
    ``max_sweeps=None`` means 200 * resolution.
    """

    relaxation: float | None = None
    tol_residual: float = 1e-8
    tol_complementarity: float = 1e-8
    max_sweeps: int | None = None
    ordering: str = "red-black"
    check_every: int = 10
    nested: bool = True

    def __post_init__(self):
        if self.relaxation is not None and not 0.0 < self.relaxation < 2.0:
            raise ValueError(f"relaxation must lie in (0, 2), got {self.relaxation}")
        if not (self.tol_residual > 0 and self.tol_complementarity > 0):
            raise ValueError("tolerances must be positive")
        if self.max_sweeps is not None and self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")

    def omega(self, resolution: int, damping: float = 1.0) -> float:
        return optimal_relaxation(resolution, damping) if self.relaxation is None else float(self.relaxation)

    def budget(self, resolution: int) -> int:
        return 200 * resolution if self.max_sweeps is None else int(self.max_sweeps)


@dataclass
class SolveDiagnostics:
    sweeps_used: int
    final_residual: float
    final_complementarity: float
    converged: bool
    peclet_warning: bool = False
    relaxation: float = 0.0
    ordering: str = "red-black"
    scale: float = 1.0
    coarse_sweeps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet data on the outer boundary of the solve region.

    ``values`` has the full grid shape; only nodes outside the free set are
    read. ``source`` is ``"exact-solution"`` or ``"field-trace"``.
    """

    grid: Grid
    values: np.ndarray
    source: str = "field-trace"
    name: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise InadmissibleBoundary(f"boundary values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteField("boundary data has non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_exact(cls, sol, grid: Grid) -> "BoundaryData":
        return cls(grid, sol.on(grid).values, "exact-solution", getattr(sol, "name", ""))

    @classmethod
    def from_field(cls, f: GridFunction) -> "BoundaryData":
        return cls(f.grid, f.values, "field-trace")

    @property
    def scale(self) -> float:
        s = float(np.max(np.abs(self.values[~interior_mask(self.grid)])))
        return s if s > 0 else 1.0


@dataclass(frozen=True)
class CoefficientField:
    """Either a drift b (``kind="drift"``, shape (dim,) + grid.shape, x_1..x_n)
    or a scalar weight a (``kind="weight"``, grid shape, a >= a_min > 0).

    Drift must be even in x_n in its tangential components and odd in its
    normal component for the reflected problem to make sense; only the upper
    half is stored and the normal component is ignored on the thin plane.
    """

    grid: Grid
    kind: str
    data: np.ndarray
    a_min: float = 0.0

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if not np.all(np.isfinite(data)):
            raise NonFiniteField("coefficient field has non-finite values")
        if self.kind == "drift":
            if data.shape != (self.grid.dim,) + self.grid.shape:
                raise ValueError(f"drift must have shape {(self.grid.dim,) + self.grid.shape}")
        elif self.kind == "weight":
            if data.shape != self.grid.shape:
                raise ValueError(f"weight must have shape {self.grid.shape}")
            amin = float(data.min())
            if amin <= 0 or amin < self.a_min:
                raise ValueError(f"weight must be bounded below by a_min > 0, min is {amin:g}")
            object.__setattr__(self, "a_min", amin if self.a_min <= 0 else self.a_min)
        else:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def drift(cls, grid: Grid, b) -> "CoefficientField":
        """``b`` is a constant vector or a callable on points (N, dim) -> (N, dim)."""
        if callable(b):
            pts = grid.points().reshape(-1, grid.dim)
            vals = np.asarray(b(pts), dtype=float).reshape(grid.shape + (grid.dim,))
            data = np.moveaxis(vals, -1, 0)
        else:
            b = np.asarray(b, dtype=float).ravel()
            if b.size != grid.dim:
                raise ValueError(f"constant drift must have {grid.dim} components")
            data = np.broadcast_to(b.reshape((-1,) + (1,) * grid.dim), (grid.dim,) + grid.shape)
        return cls(grid, "drift", data)

    @classmethod
    def weight(cls, grid: Grid, a, a_min: float = 0.0) -> "CoefficientField":
        if callable(a):
            pts = grid.points().reshape(-1, grid.dim)
            data = np.asarray(a(pts), dtype=float).reshape(grid.shape)
        else:
            data = np.full(grid.shape, float(a))
        return cls(grid, "weight", data, a_min)

    def coarsen(self, coarse: Grid) -> "CoefficientField":
        inj = (slice(None, None, 2),) * self.grid.dim
        if self.kind == "drift":
            return CoefficientField(coarse, "drift", self.data[(slice(None),) + inj])
        return CoefficientField(coarse, "weight", self.data[inj], self.a_min)


# ---------------------------------------------------------------------------
# stencil assembly


def interior_mask(grid: Grid) -> np.ndarray:
    """Free nodes of a whole-grid solve: everything off the outer faces."""
    mask = np.zeros(grid.shape, dtype=bool)
    inner = (slice(0, -1),) + (slice(1, -1),) * (grid.dim - 1)
    mask[inner] = True
    return mask


def ball_mask(grid: Grid, ball: BallSpec) -> np.ndarray:
    """Nodes strictly inside the ball."""
    pts = grid.points()
    dist = np.linalg.norm(pts - np.asarray(ball.center), axis=-1)
    return dist < ball.radius - 1e-9 * grid.h


@dataclass(frozen=True, eq=False)
class Stencil:
    """Rows of the relaxation system for the free nodes, in sweep order."""

    grid: Grid
    nodes: np.ndarray  # flat node indices
    nbr: np.ndarray  # (m, 2n) flat neighbour indices
    coef: np.ndarray  # (m, 2n)
    diag: np.ndarray  # (m,)
    thin: np.ndarray  # (m,) bool
    peclet: bool = False
    damping: float = 1.0  # Jacobi spectral-radius factor from the drift


def _colour_order(multi: np.ndarray, ordering: str) -> np.ndarray:
    if ordering == "lexicographic":
        return np.arange(multi.shape[1])
    parity = multi.sum(axis=0) % 2
    return np.argsort(parity, kind="stable")


def build_stencil(grid: Grid, free: np.ndarray, ordering: str = "red-black",
                  coeff: CoefficientField | None = None) -> Stencil:
    n = grid.dim
    h = grid.h
    shape = grid.shape
    flat = np.flatnonzero(free)
    multi = np.array(np.unravel_index(flat, shape))
    order = _colour_order(multi, ordering)
    flat = flat[order]
    multi = multi[:, order]
    strides = np.array([int(np.prod(shape[a + 1:])) for a in range(n)])
    m = flat.size
    nbr = np.empty((m, 2 * n), dtype=np.int64)
    coef = np.ones((m, 2 * n))
    thin = multi[0] == 0
    peclet = False
    damping = 1.0
    for a in range(n):
        up = flat + strides[a]
        down = flat - strides[a]
        if a == 0:
            down = np.where(thin, up, down)
        nbr[:, 2 * a] = up
        nbr[:, 2 * a + 1] = down
        if np.any(multi[a] == 0) and a > 0 or np.any(multi[a] == shape[a] - 1):
            raise InadmissibleBoundary("free nodes touch the outer boundary of the grid")

    if coeff is not None and coeff.kind == "weight":
        a_flat = coeff.data.ravel()
        ap = a_flat[flat]
        for j in range(2 * n):
            aq = a_flat[nbr[:, j]]
            coef[:, j] = 2.0 * ap * aq / (ap + aq)
    elif coeff is not None and coeff.kind == "drift":
        axis_factors = []
        for a in range(n):
            k = n - 1 - a  # spatial component along array axis a
            b = coeff.data[k].ravel()[flat]
            if a == 0:
                b = np.where(thin, 0.0, b)
            hb = 0.5 * h * b
            upwind = np.abs(hb) > 1.0
            peclet = peclet or bool(np.any(upwind))
            pe = min(float(np.max(np.abs(hb))), 1.0) if m else 0.0
            axis_factors.append(math.sqrt(1.0 - pe * pe))
            cp = np.where(upwind, np.where(b < 0, 1.0 + h * np.abs(b), 1.0), 1.0 - hb)
            cm = np.where(upwind, np.where(b > 0, 1.0 + h * np.abs(b), 1.0), 1.0 + hb)
            coef[:, 2 * a] = cp
            coef[:, 2 * a + 1] = cm
        if peclet:
            warnings.warn("cell Peclet number above 1, drift stencil upwinded", PecletWarning, stacklevel=3)
        damping = sum(axis_factors) / n
    diag = coef.sum(axis=1)
    return Stencil(grid, flat, nbr, coef, diag, thin, peclet, damping)


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _sweeps(u, nodes, nbr, coef, diag, project, omega, count):
    m = nodes.shape[0]
    k = nbr.shape[1]
    for _ in range(count):
        for i in range(m):
            p = nodes[i]
            acc = 0.0
            for j in range(k):
                acc += coef[i, j] * u[nbr[i, j]]
            v = u[p] + omega * (acc / diag[i] - u[p])
            if project[i] and v < 0.0:
                v = 0.0
            u[p] = v


@numba.njit(cache=True)
def _measure(u, nodes, nbr, coef, diag, project):
    """(max residual, max |min(u, w)| and u<0 violation, max |u w|) with w = u - gs."""
    m = nodes.shape[0]
    k = nbr.shape[1]
    res = 0.0
    comp = 0.0
    prod = 0.0
    for i in range(m):
        p = nodes[i]
        acc = 0.0
        for j in range(k):
            acc += coef[i, j] * u[nbr[i, j]]
        r = acc / diag[i] - u[p]
        if project[i]:
            w = -r
            mv = abs(min(u[p], w))
            if mv > res:
                res = mv
            if mv > comp:
                comp = mv
            if -u[p] > comp:
                comp = -u[p]
            if abs(u[p] * w) > prod:
                prod = abs(u[p] * w)
        elif abs(r) > res:
            res = abs(r)
    return res, comp, prod


@numba.njit(cache=True)
def _defects(u, nodes, nbr, coef, diag):
    m = nodes.shape[0]
    k = nbr.shape[1]
    out = np.empty(m)
    for i in range(m):
        acc = 0.0
        for j in range(k):
            acc += coef[i, j] * u[nbr[i, j]]
        out[i] = acc - diag[i] * u[nodes[i]]
    return out


def _relax(st: Stencil, u0: np.ndarray, opts: SolveOptions, project: bool, scale: float):
    u = np.array(u0, dtype=float).ravel()
    proj = st.thin if project else np.zeros_like(st.thin)
    if project:
        u[st.nodes[st.thin]] = np.maximum(u[st.nodes[st.thin]], 0.0)
    omega = opts.omega(st.grid.resolution, st.damping)
    budget = opts.budget(st.grid.resolution)
    tol_r = opts.tol_residual * scale
    tol_c = opts.tol_complementarity * scale
    used = 0
    res, comp, prod = _measure(u, st.nodes, st.nbr, st.coef, st.diag, proj)
    converged = res <= tol_r and comp + prod / scale <= tol_c
    while not converged and used < budget:
        step = min(opts.check_every, budget - used)
        _sweeps(u, st.nodes, st.nbr, st.coef, st.diag, proj, omega, step)
        used += step
        res, comp, prod = _measure(u, st.nodes, st.nbr, st.coef, st.diag, proj)
        converged = res <= tol_r and comp + prod / scale <= tol_c
    diag = SolveDiagnostics(
        sweeps_used=used,
        final_residual=float(res),
        final_complementarity=float(comp + prod / scale),
        converged=bool(converged),
        peclet_warning=st.peclet,
        relaxation=omega,
        ordering=opts.ordering,
        scale=scale,
    )
    return u.reshape(st.grid.shape), diag


# ---------------------------------------------------------------------------
# whole-grid solves


def _coarse_grid(grid: Grid) -> Grid | None:
    res = grid.resolution
    if res % 4 != 1 or (res + 1) // 2 < NEST_MIN_RESOLUTION:
        return None
    return make_grid(grid.dim, (res + 1) // 2, grid.extent)


def _initial_guess(grid: Grid, boundary: np.ndarray, free: np.ndarray, opts: SolveOptions,
                   project: bool, coeff: CoefficientField | None, scale: float, log: list):
    """Zero in the interior, or the prolonged solution of the same problem one
    level coarser (boundary and coefficients injected)."""
    u0 = np.where(free, 0.0, boundary)
    coarse = _coarse_grid(grid) if opts.nested else None
    if coarse is None:
        return u0
    inj = (slice(None, None, 2),) * grid.dim
    cb = boundary[inj]
    cc = coeff.coarsen(coarse) if coeff is not None else None
    cfree = interior_mask(coarse)
    cu0 = _initial_guess(coarse, cb, cfree, opts, project, cc, scale, log)
    cst = build_stencil(coarse, cfree, opts.ordering, cc)
    copts = SolveOptions(opts.relaxation, opts.tol_residual, opts.tol_complementarity,
                         None, opts.ordering, opts.check_every, False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        cu, cdiag = _relax(cst, cu0, copts, project, scale)
    log.append(cdiag.sweeps_used)
    prolonged = evaluate(GridFunction(coarse, cu), grid.points())
    return np.where(free, prolonged, boundary)


def _solve_full(grid: Grid, boundary: BoundaryData, opts: SolveOptions, project: bool,
                coeff: CoefficientField | None = None):
    if boundary.grid != grid:
        raise InadmissibleBoundary("boundary data lives on a different grid")
    free = interior_mask(grid)
    if project:
        thin_bdry = boundary.values[0][~free[0]]
        if np.any(thin_bdry < 0):
            raise InadmissibleBoundary(
                f"boundary data negative on the thin plane (min {thin_bdry.min():g}); need g >= 0"
            )
    if coeff is not None and coeff.grid != grid:
        raise ValueError("coefficient field lives on a different grid")
    scale = boundary.scale
    log: list = []
    u0 = _initial_guess(grid, boundary.values, free, opts, project, coeff, scale, log)
    st = build_stencil(grid, free, opts.ordering, coeff)
    u, diag = _relax(st, u0, opts, project, scale)
    diag.coarse_sweeps = log[::-1]
    f = GridFunction(grid, u)
    if not diag.converged:
        raise NonConvergence(
            f"no convergence in {diag.sweeps_used} sweeps (residual {diag.final_residual:.3e}, "
            f"complementarity {diag.final_complementarity:.3e})",
            diagnostics=diag,
            field=f,
        )
    return f, diag


def solve_signorini(grid: Grid, boundary: BoundaryData, opts: SolveOptions | None = None):
    """Discrete Signorini solve on the whole grid. Returns (field, diagnostics)."""
    return _solve_full(grid, boundary, opts or SolveOptions(), True)


def solve_harmonic(grid: Grid, boundary: BoundaryData, opts: SolveOptions | None = None):
    """Unconstrained discrete harmonic solve with the same stencil."""
    return _solve_full(grid, boundary, opts or SolveOptions(), False)


def solve_drift(grid: Grid, boundary: BoundaryData, drift: CoefficientField, opts: SolveOptions | None = None):
    """-Lap u + b.grad u = 0 off the plane with the Signorini constraint on it."""
    if drift.kind != "drift":
        raise ValueError("solve_drift needs a drift coefficient field")
    return _solve_full(grid, boundary, opts or SolveOptions(), True, drift)


def solve_weighted(grid: Grid, boundary: BoundaryData, coeff: CoefficientField, opts: SolveOptions | None = None):
    """Minimizer of sum a_face |grad u|^2 over the constraint set."""
    if coeff.kind != "weight":
        raise ValueError("solve_weighted needs a weight coefficient field")
    return _solve_full(grid, boundary, opts or SolveOptions(), True, coeff)


# ---------------------------------------------------------------------------
# ball replacements


def _replace(u: GridFunction, ball: BallSpec, opts: SolveOptions, project: bool,
             coeff: CoefficientField | None = None):
    check_ball(u.grid, ball)
    free = ball_mask(u.grid, ball)
    st = build_stencil(u.grid, free, opts.ordering, coeff)
    v, diag = _relax(st, u.values, opts, project, u.scale)
    f = GridFunction(u.grid, v)
    if not diag.converged:
        raise NonConvergence(
            f"ball replacement did not converge in {diag.sweeps_used} sweeps",
            diagnostics=diag,
            field=f,
        )
    return f, diag


def signorini_replacement(u: GridFunction, ball: BallSpec, opts: SolveOptions | None = None,
                          return_diagnostics: bool = False):
    """Signorini solve inside ``ball`` with Dirichlet data from ``u`` elsewhere."""
    v, diag = _replace(u, ball, opts or SolveOptions(), True)
    return (v, diag) if return_diagnostics else v


def harmonic_replacement(u: GridFunction, ball: BallSpec, opts: SolveOptions | None = None,
                         return_diagnostics: bool = False):
    v, diag = _replace(u, ball, opts or SolveOptions(), False)
    return (v, diag) if return_diagnostics else v


# ---------------------------------------------------------------------------
# energies and complementarity


def _edge_weights(grid: Grid):
    """Per-axis weights of upper-half edges in the reflected full-domain sum.

    Edges inside the thin plane exist once; every other edge has a mirror
    image below the plane.
    """
    out = []
    for a in range(grid.dim):
        shape = list(grid.shape)
        shape[a] -= 1
        w = np.full(shape, 2.0)
        if a > 0:
            w[0] = 1.0
        out.append(w)
    return out


def discrete_energy(u: GridFunction, region: BallSpec | np.ndarray | None = None,
                    coeff: CoefficientField | None = None) -> float:
    """Stencil energy h^{n-2} sum_edges a_e (u_p - u_q)^2 over the full domain.

    With ``region`` given (a ball or a node mask) only edges touching a node of
    the region count. This is the quadratic the relaxation minimizes, so a
    replacement never has larger energy than the field it replaces.
    """
    g = u.grid
    if region is None:
        mask = np.ones(g.shape, dtype=bool)
    elif isinstance(region, BallSpec):
        mask = ball_mask(g, region)
    else:
        mask = np.asarray(region, dtype=bool)
    total = 0.0
    for a, w in enumerate(_edge_weights(g)):
        d = np.diff(u.values, axis=a)
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        touch = mask[tuple(lo)] | mask[tuple(hi)]
        if coeff is not None:
            if coeff.kind != "weight":
                raise ValueError("energy weights must be a scalar coefficient")
            ap = coeff.data[tuple(lo)]
            aq = coeff.data[tuple(hi)]
            w = w * 2.0 * ap * aq / (ap + aq)
        total += float(np.sum((w * d * d)[touch]))
    return total * g.h ** (g.dim - 2)


def discrete_conormal(u: GridFunction, coeff: CoefficientField | None = None) -> np.ndarray:
    """One-sided normal derivative on the thin plane read off the stencil row.

    The row defect of a thin node equals h^2 Lap u + h (c_up + c_down) d_n u,
    so at a discrete solution the defect / (h (c_up + c_down)) is the
    derivative consistent with the complementarity conditions. Returned on the
    thin-plane array (NaN on the outer faces).
    """
    g = u.grid
    free = interior_mask(g)
    free[1:] = False
    st = build_stencil(g, free, "lexicographic", coeff)
    d = _defects(u.values.ravel(), st.nodes, st.nbr, st.coef, st.diag)
    out = np.full(g.shape[1:], np.nan)
    pair = st.coef[:, 0] + st.coef[:, 1]
    out.ravel()[st.nodes] = d / (g.h * pair)
    return out


def one_sided_normal_derivative(u: GridFunction) -> np.ndarray:
    """Second-order one-sided difference (-3u_0 + 4u_1 - u_2) / 2h on the plane."""
    v = u.values
    return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * u.grid.h)


@dataclass(frozen=True)
class ComplementarityReport:
    product: float
    constraint: float
    sign: float
    scale: float

    @property
    def headline(self) -> float:
        """Each term made dimensionless in u: the product carries u twice."""
        s = self.scale
        return max(self.product / s, self.constraint, self.sign) / s


def verify_complementarity(u: GridFunction, region=None, normal_derivative: np.ndarray | None = None,
                           report: bool = False):
    """Largest violation of u >= 0, d_n u <= 0 and u d_n u = 0 on the thin plane.

    ``region`` is a BallSpec (thin nodes in its disk), a boolean thin-plane
    mask, or None for all non-boundary thin nodes. ``normal_derivative`` is
    an array on the thin plane; by default the one-sided gradient stencil.
    """
    g = u.grid
    trace = u.thin_trace
    dn = one_sided_normal_derivative(u) if normal_derivative is None else np.asarray(normal_derivative)
    if dn.shape != trace.shape:
        raise ValueError(f"normal derivative shape {dn.shape} != thin plane shape {trace.shape}")
    if region is None:
        mask = interior_mask(g)[0]
    elif isinstance(region, BallSpec):
        mask = ball_mask(g, region)[0]
    else:
        mask = np.asarray(region, dtype=bool)
    mask = mask & np.isfinite(dn)
    if not np.any(mask):
        rep = ComplementarityReport(0.0, 0.0, 0.0, u.scale)
    else:
        t = trace[mask]
        d = dn[mask]
        rep = ComplementarityReport(
            product=float(np.max(np.abs(t * d))),
            constraint=float(np.max(np.maximum(-t, 0.0))),
            sign=float(np.max(np.maximum(d, 0.0))),
            scale=u.scale,
        )
    return rep if report else rep.headline
