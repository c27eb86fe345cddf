"""
Half-domain Cartesian grids and the quadratures every concentric-ball
functional is built from.

Only the closed upper half {x_n >= 0} of the cube [-L, L]^{n-1} x [-L, L] is
stored. Fields are even in x_n, so lower-half evaluation reflects. Arrays are
indexed ``values[k_n, ..., k_1]`` (x_1 fastest in memory), which makes array
axis 0 the normal direction and array index 0 along it the thin plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import (
    EvenResolution,
    GridError,
    InadmissibleBall,
    NonFiniteField,
    OutsideDomain,
    ResolutionTooSmall,
)

MIN_RESOLUTION = 17
# Half-circle angles in 2D (512 on the full circle); hemisphere lat x lon in 3D.
SPHERE_ANGLES_2D = 256
SPHERE_LAT_3D = 32
SPHERE_LON_3D = 128
SUBSAMPLES_PER_AXIS = 4
BALL_FLOOR_CELLS = 4.0
BALL_MARGIN_CELLS = 2.0


@dataclass(frozen=True)
class Grid:
    dim: int
    resolution: int
    extent: float

    @property
    def h(self) -> float:
        return 2.0 * self.extent / (self.resolution - 1)

    @property
    def normal_nodes(self) -> int:
        return (self.resolution + 1) // 2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.normal_nodes,) + (self.resolution,) * (self.dim - 1)

    def axis_coords(self, axis: int) -> np.ndarray:
        """Node coordinates along spatial axis ``axis`` (0 = x_1, dim-1 = x_n)."""
        if axis == self.dim - 1:
            return self.h * np.arange(self.normal_nodes)
        return -self.extent + self.h * np.arange(self.resolution)

    def points(self) -> np.ndarray:
        """Coordinates of every node, shape ``shape + (dim,)`` ordered (x_1..x_n)."""
        axes = [self.axis_coords(self.dim - 1 - a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        # mesh[a] varies along array axis a, i.e. spatial axis dim-1-a
        return np.stack(mesh[::-1], axis=-1)

    def thin_points(self) -> np.ndarray:
        """Coordinates of thin-plane nodes, shape ``shape[1:] + (dim,)``."""
        return self.points()[0]

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lim = self.extent * (1.0 + tol) + tol
        return np.all(np.abs(pts) <= lim, axis=-1)


def make_grid(dim: int, resolution: int, extent: float = 1.0) -> Grid:
    if dim not in (2, 3):
        raise GridError(f"dim must be 2 or 3, got {dim}")
    if resolution % 2 == 0:
        raise EvenResolution(f"resolution must be odd so x_n=0 is a node layer, got {resolution}")
    if resolution < MIN_RESOLUTION:
        raise ResolutionTooSmall(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if not extent > 0:
        raise GridError(f"extent must be positive, got {extent}")
    return Grid(int(dim), int(resolution), float(extent))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteField("grid function has non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def thin_trace(self) -> np.ndarray:
        return self.values[0]

    @property
    def scale(self) -> float:
        s = float(np.max(np.abs(self.values)))
        return s if s > 0 else 1.0

    def __call__(self, pts):
        return evaluate(self, pts)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Discrete gradient; ``components[k]`` is the x_{k+1} derivative.

    At thin-plane nodes the x_n component is the one-sided limit from above.
    """

    grid: Grid
    components: np.ndarray


@dataclass(frozen=True)
class BallSpec:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        if c[-1] != 0.0:
            raise InadmissibleBall(f"ball center must lie on the thin plane, got x_n={c[-1]}")
        if not self.radius > 0:
            raise InadmissibleBall(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @classmethod
    def at_origin(cls, dim: int, radius: float) -> "BallSpec":
        return cls((0.0,) * dim, radius)


def check_ball(grid: Grid, ball: BallSpec) -> None:
    """Raise InadmissibleBall unless ``ball`` fits the grid with margin and floor."""
    if len(ball.center) != grid.dim:
        raise InadmissibleBall("ball dimension does not match grid")
    h = grid.h
    if ball.radius < BALL_FLOOR_CELLS * h * (1 - 1e-9):
        raise InadmissibleBall(f"radius {ball.radius:g} below the {BALL_FLOOR_CELLS:g}h floor ({BALL_FLOOR_CELLS * h:g})")
    reach = np.abs(np.asarray(ball.center)) + ball.radius + BALL_MARGIN_CELLS * h
    if np.any(reach > grid.extent * (1 + 1e-12)):
        raise InadmissibleBall(
            f"ball B_{ball.radius:g}({ball.center}) leaves the grid extent {grid.extent:g} with margin 2h"
        )


def ball_is_admissible(grid: Grid, ball: BallSpec) -> bool:
    try:
        check_ball(grid, ball)
    except InadmissibleBall:
        return False
    return True


def sample(evaluator: Callable[[np.ndarray], np.ndarray], grid: Grid) -> GridFunction:
    """Evaluate ``evaluator`` (points of shape (N, dim) -> (N,)) at every node."""
    pts = grid.points()
    vals = np.asarray(evaluator(pts.reshape(-1, grid.dim)), dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteField("evaluator returned non-finite values")
    return GridFunction(grid, vals)


def _fractional_index(grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Array-axis ordered fractional indices for (already reflected) points."""
    n = grid.dim
    h = grid.h
    idx = np.empty((n,) + pts.shape[:-1])
    for a in range(n):
        k = n - 1 - a
        if k == n - 1:
            idx[a] = pts[..., k] / h
        else:
            idx[a] = (pts[..., k] + grid.extent) / h
    return idx


def _interp(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if pts.shape[-1] != grid.dim:
        raise OutsideDomain(f"points have dimension {pts.shape[-1]}, grid has {grid.dim}")
    inside = grid.contains(pts)
    if not np.all(inside):
        bad = pts[~inside].reshape(-1, grid.dim)[0]
        raise OutsideDomain(f"point {tuple(bad)} outside the grid domain")
    refl = pts.copy()
    refl[..., -1] = np.abs(refl[..., -1])
    idx = _fractional_index(grid, refl)
    flat = idx.reshape(grid.dim, -1)
    out = ndimage.map_coordinates(values, flat, order=1, mode="nearest", prefilter=False)
    return out.reshape(pts.shape[:-1])


def evaluate(f: GridFunction, pts) -> np.ndarray | float:
    """Multilinear interpolation of ``f``; lower-half points are reflected."""
    pts = np.asarray(pts, dtype=float)
    out = _interp(f.grid, f.values, pts)
    return float(out) if pts.ndim == 1 else out


def gradient(f: GridFunction) -> VectorField:
    """Central differences inside, second-order one-sided at every array edge.

    Along the normal axis the lower edge is the thin plane, so the x_n
    component there is the one-sided derivative from above and never reads
    reflected values.
    """
    g = f.grid
    parts = np.gradient(f.values, g.h, edge_order=2)
    if g.dim == 1:
        parts = [parts]
    comps = np.stack([parts[g.dim - 1 - k] for k in range(g.dim)])
    return VectorField(g, comps)


def evaluate_gradient(grad: VectorField, pts) -> np.ndarray:
    """Interpolated gradient at points, shape ``pts.shape``; reflects x_n."""
    pts = np.asarray(pts, dtype=float)
    g = grad.grid
    out = np.stack([_interp(g, grad.components[k], pts) for k in range(g.dim)], axis=-1)
    lower = pts[..., -1] < 0
    out[..., -1] = np.where(lower, -out[..., -1], out[..., -1])
    return out


# ---------------------------------------------------------------------------
# quadrature


def unit_sphere_rule(dim: int, upper_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on the unit upper hemisphere with weights for the whole sphere.

    Integrands handled here are even in x_n, so the lower half is folded in by
    doubling the weights.
    """
    if dim == 2:
        k = SPHERE_ANGLES_2D
        theta = (np.arange(k) + 0.5) * np.pi / k
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        weights = np.full(k, 2.0 * np.pi / k)
    elif dim == 3:
        mu, wmu = np.polynomial.legendre.leggauss(SPHERE_LAT_3D)
        mu = 0.5 * (mu + 1.0)
        wmu = 0.5 * wmu
        phi = (np.arange(SPHERE_LON_3D) + 0.5) * 2.0 * np.pi / SPHERE_LON_3D
        M, P = np.meshgrid(mu, phi, indexing="ij")
        s = np.sqrt(1.0 - M**2)
        nodes = np.stack([s * np.cos(P), s * np.sin(P), M], axis=-1).reshape(-1, 3)
        weights = (2.0 * np.outer(wmu, np.full(SPHERE_LON_3D, 2.0 * np.pi / SPHERE_LON_3D))).ravel()
    else:
        raise GridError(f"unsupported dimension {dim}")
    if not upper_only:
        lower = nodes.copy()
        lower[:, -1] *= -1
        nodes = np.concatenate([nodes, lower])
        weights = np.concatenate([weights, weights]) / 2.0
    return nodes, weights


def sphere_points(ball: BallSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(points, outward normals, weights) on the sphere of ``ball``."""
    dim = len(ball.center)
    xi, w = unit_sphere_rule(dim)
    pts = np.asarray(ball.center) + ball.radius * xi
    return pts, xi, w * ball.radius ** (dim - 1)


def sphere_integral(f: GridFunction, ball: BallSpec, integrand: Callable, normal: bool = False) -> float:
    """Integral over the sphere of ``integrand(values)``.

    With ``normal=True`` the integrand is called as ``integrand(values, u_nu)``
    where u_nu comes from the interpolated discrete gradient.
    """
    check_ball(f.grid, ball)
    pts, nu, w = sphere_points(ball)
    vals = evaluate(f, pts)
    if normal:
        grad = evaluate_gradient(gradient(f), pts)
        u_nu = np.sum(grad * nu, axis=-1)
        return float(np.sum(w * integrand(vals, u_nu)))
    return float(np.sum(w * integrand(vals)))


def sphere_mass(f: GridFunction, ball: BallSpec) -> float:
    """H = integral of f^2 over the sphere bounding ``ball``."""
    return sphere_integral(f, ball, lambda v: v * v)


def sphere_flux_deficit(f: GridFunction, ball: BallSpec, kappa: float, b: float, alpha: float) -> float:
    r = ball.radius
    c = kappa * (1.0 - b * r**alpha) / r
    return sphere_integral(f, ball, lambda v, dv: (dv - c * v) ** 2, normal=True)


def _cell_gradient_sq(values: np.ndarray, h: float) -> np.ndarray:
    """|grad|^2 at cell centres of the multilinear interpolant."""
    n = values.ndim
    total = np.zeros(tuple(s - 1 for s in values.shape))
    for a in range(n):
        d = np.diff(values, axis=a) / h
        for b in range(n):
            if b != a:
                sl0 = [slice(None)] * n
                sl1 = [slice(None)] * n
                sl0[b] = slice(None, -1)
                sl1[b] = slice(1, None)
                d = 0.5 * (d[tuple(sl0)] + d[tuple(sl1)])
        total += d * d
    return total


def _ball_window(grid: Grid, ball: BallSpec) -> tuple[list[slice], list[np.ndarray]]:
    """Node index window (array-axis order) covering the ball's upper half."""
    n = grid.dim
    h = grid.h
    slices, coords = [], []
    for a in range(n):
        k = n - 1 - a
        c = grid.axis_coords(k)
        lo_x = ball.center[k] - ball.radius if k < n - 1 else 0.0
        hi_x = ball.center[k] + ball.radius
        lo = max(int(np.floor((lo_x - c[0]) / h)) - 1, 0)
        hi = min(int(np.ceil((hi_x - c[0]) / h)) + 2, len(c))
        slices.append(slice(lo, hi))
        coords.append(c[lo:hi])
    return slices, coords


def _uniform_sum_cdf(d: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """P(sum_k V_k <= d) for independent V_k ~ U(-w_k/2, w_k/2).

    This is the exact area fraction of a cube cut by a half-space whose normal
    has per-axis projections ``widths`` / side. Widths below 1e-3 of the largest
    are dropped (the piecewise-polynomial formula cancels badly there).
    """
    wmax = widths.max(axis=-1, keepdims=True)
    w = np.where(widths < 1e-3 * wmax, 0.0, widths)
    k = np.count_nonzero(w, axis=-1)
    out = np.empty(d.shape)
    # generic inclusion-exclusion over the active widths
    for m in np.unique(k):
        sel = k == m
        ws = np.sort(w[sel], axis=-1)[:, ::-1][:, :m]
        dd = d[sel]
        total = np.zeros(dd.shape)
        half = 0.5 * ws.sum(axis=-1)
        for eps in np.ndindex(*(2,) * m):
            e = np.array(eps)
            shift = half - ws @ e
            total += (-1) ** e.sum() * np.maximum(dd + shift, 0.0) ** m
        out[sel] = total / (math.factorial(m) * np.prod(ws, axis=-1))
    return np.clip(out, 0.0, 1.0)


def _cut_cell_geometry(grid: Grid, ball: BallSpec):
    """Window slices, lower cell corners and inside/cut masks for the ball."""
    n = grid.dim
    h = grid.h
    slices, coords = _ball_window(grid, ball)
    lo_c = [c[:-1] for c in coords]
    near = []
    far = []
    for a in range(n):
        k = n - 1 - a
        x0 = lo_c[a] - ball.center[k]
        x1 = x0 + h
        nearest = np.where((x0 <= 0) & (x1 >= 0), 0.0, np.minimum(np.abs(x0), np.abs(x1)))
        farthest = np.maximum(np.abs(x0), np.abs(x1))
        shape = [1] * n
        shape[a] = -1
        near.append((nearest**2).reshape(shape))
        far.append((farthest**2).reshape(shape))
    r2 = ball.radius**2
    inside = sum(far) <= r2
    cut = (sum(near) < r2) & ~inside
    return slices, lo_c, inside, cut


def _subcell_weights(grid: Grid, ball: BallSpec, lo_c, cut_idx):
    """Sub-cell local coordinates (in [0,1]^n, array-axis order) and inside fractions."""
    n = grid.dim
    h = grid.h
    s = SUBSAMPLES_PER_AXIS
    local = (np.arange(s) + 0.5) / s
    sub = np.meshgrid(*([local] * n), indexing="ij")
    sub = np.stack([x.ravel() for x in sub], axis=-1)  # (s^n, n)
    rel = np.empty((len(cut_idx[0]), s**n, n))
    for a in range(n):
        k = n - 1 - a
        base = lo_c[a][cut_idx[a]] - ball.center[k]
        rel[..., a] = base[:, None] + h * sub[None, :, a]
    dist = np.linalg.norm(rel, axis=-1)
    normal = rel / np.maximum(dist, 1e-300)[..., None]
    widths = (h / s) * np.abs(normal)
    frac = _uniform_sum_cdf((ball.radius - dist).ravel(), widths.reshape(-1, n)).reshape(dist.shape)
    return sub, frac


def cell_fractions(grid: Grid, ball: BallSpec) -> tuple[list[slice], np.ndarray]:
    """Fraction of each upper-half cell inside the ball, on the ball's window.

    Cells cut by the sphere are split into a fixed 4^n sub-sample; each
    sub-cell's share comes from the tangent half-space at its centre.
    """
    slices, lo_c, inside, cut = _cut_cell_geometry(grid, ball)
    frac = inside.astype(float)
    if np.any(cut):
        cut_idx = np.nonzero(cut)
        _, sub_frac = _subcell_weights(grid, ball, lo_c, cut_idx)
        frac[cut_idx] = sub_frac.mean(axis=1)
    return slices, frac


def _multilinear_gradient_sq(corners: np.ndarray, local: np.ndarray, h: float) -> np.ndarray:
    """|grad|^2 of the multilinear interpolant.

    ``corners`` has shape (cells, 2, ..., 2) (array-axis order), ``local`` has
    shape (points, n); returns (cells, points).
    """
    n = local.shape[1]
    total = np.zeros((corners.shape[0], local.shape[0]))
    for a in range(n):
        d = np.take(corners, 1, axis=1 + a) - np.take(corners, 0, axis=1 + a)  # (cells, 2^(n-1))
        d = d.reshape(corners.shape[0], -1)
        others = [b for b in range(n) if b != a]
        wts = _corner_weights(local, others)
        g = d @ wts.T / h
        total += g * g
    return total


def _corner_weights(local: np.ndarray, axes: list[int]) -> np.ndarray:
    """Multilinear weights over corners of the given axes, C-order flattened."""
    w = np.ones((local.shape[0], 1))
    for b in axes:
        t = local[:, b][:, None]
        w = np.stack([w * (1 - t), w * t], axis=-1).reshape(local.shape[0], -1)
    return w


def ball_energy(f: GridFunction, ball: BallSpec) -> float:
    """D = integral of |grad f|^2 over the ball (twice the upper-half integral).

    Whole cells use the cell-centre gradient of the multilinear interpolant;
    cut cells sum that gradient over their 4^n sub-cells weighted by each
    sub-cell's inside fraction.
    """
    g = f.grid
    check_ball(g, ball)
    slices, lo_c, inside, cut = _cut_cell_geometry(g, ball)
    vals = f.values[tuple(slices)]
    g2 = _cell_gradient_sq(vals, g.h)
    total = float(np.sum(g2[inside]))
    if np.any(cut):
        cut_idx = np.nonzero(cut)
        local, sub_frac = _subcell_weights(g, ball, lo_c, cut_idx)
        n = g.dim
        corners = np.empty((len(cut_idx[0]),) + (2,) * n)
        for off in np.ndindex(*(2,) * n):
            idx = tuple(ci + o for ci, o in zip(cut_idx, off))
            corners[(slice(None),) + off] = vals[idx]
        sub_g2 = _multilinear_gradient_sq(corners, local, g.h)
        total += float(np.sum(sub_g2 * sub_frac) / local.shape[0])
    return 2.0 * total * g.h**g.dim


def ball_volume(grid: Grid, ball: BallSpec) -> float:
    """Discrete ball volume with the same cell fractions (diagnostic)."""
    _, frac = cell_fractions(grid, ball)
    return float(2.0 * np.sum(frac) * grid.h**grid.dim)


# ---------------------------------------------------------------------------
# field dump format


def write_field(f: GridFunction, path: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.json`` + ``<stem>.bin`` (little-endian float64, x_1 fastest)."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    meta = {
        "dim": f.grid.dim,
        "resolution": f.grid.resolution,
        "extent": f.grid.extent,
        "symmetry": "even" if f.symmetric else "none",
        "value_count": int(f.values.size),
        "dtype": "<f8",
        "order": "x1-fastest",
    }
    jpath = stem.with_suffix(".json")
    bpath = stem.with_suffix(".bin")
    jpath.parent.mkdir(parents=True, exist_ok=True)
    jpath.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    bpath.write_bytes(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return jpath, bpath


def read_field(path: str | Path) -> GridFunction:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    meta = json.loads(stem.with_suffix(".json").read_text())
    grid = make_grid(meta["dim"], meta["resolution"], meta["extent"])
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    if raw.size != meta["value_count"] or raw.size != int(np.prod(grid.shape)):
        raise GridError(f"field dump {stem} has {raw.size} values, expected {meta['value_count']}")
    return GridFunction(grid, raw.reshape(grid.shape).astype(float))
