"""
Coincidence set, free boundary and point classification on the thin plane.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import exact
from .errors import InadmissibleBall, NoCrossingInWindow, NotRegularSeed, NotSingularFit
from .functionals import FrequencyLimit, WeissParams, frequency_limit, radius_ladder
from .grid import BallSpec, GridFunction, evaluate
from .rescale import BlowupFit, blowup, fit_regular_profile, fit_singular_polynomial

DEFAULT_C_TAU = 0.5


@dataclass
class FreeBoundarySet:
    grid: object = field(repr=False)
    lambda_mask: np.ndarray = field(repr=False)
    gamma_points: np.ndarray
    threshold: float

    @property
    def contact_points(self) -> np.ndarray:
        return self.grid.thin_points()[self.lambda_mask]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([f"x{k + 1}" for k in range(self.grid.dim)])
        for p in self.gamma_points:
            wr.writerow([repr(float(x)) for x in p])
        return buf.getvalue()


def contact_threshold(u: GridFunction, policy: str = "scaled", c_tau: float = DEFAULT_C_TAU,
                      tau: float | None = None) -> float:
    if policy == "scaled":
        return c_tau * u.scale * u.grid.h**1.5
    if policy == "absolute":
        if tau is None or tau < 0:
            raise ValueError("absolute policy needs tau >= 0")
        return float(tau)
    raise ValueError(f"unknown threshold policy {policy!r}")


def coincidence_set(u: GridFunction, policy: str = "scaled", c_tau: float = DEFAULT_C_TAU,
                    tau: float | None = None) -> FreeBoundarySet:
    """Contact iff u <= tau on a thin node; gamma at midpoints of mask changes."""
    thr = contact_threshold(u, policy, c_tau, tau)
    g = u.grid
    mask = u.thin_trace <= thr
    pts = g.thin_points()
    gammas = []
    for ax in range(mask.ndim):
        a = [slice(None)] * mask.ndim
        b = [slice(None)] * mask.ndim
        a[ax] = slice(None, -1)
        b[ax] = slice(1, None)
        change = mask[tuple(a)] != mask[tuple(b)]
        mid = 0.5 * (pts[tuple(a)] + pts[tuple(b)])
        gammas.append(mid[change])
    gamma = np.concatenate(gammas) if gammas else np.zeros((0, g.dim))
    order = np.lexsort(gamma.T[::-1]) if len(gamma) else np.array([], dtype=int)
    return FreeBoundarySet(g, mask, gamma[order], thr)


def _dual_cell_fractions(g, center, r: float, sub: int = 8) -> np.ndarray:
    """Fraction of each thin node's dual cell inside the thin disk B'_r(center)."""
    pts = g.thin_points()[..., :-1]
    c = np.asarray(center, dtype=float)[:-1]
    h = g.h
    rel = pts - c
    dist = np.linalg.norm(rel, axis=-1)
    half_diag = 0.5 * h * math.sqrt(g.dim - 1)
    frac = (dist + half_diag <= r).astype(float)
    cut = (dist - half_diag < r) & (dist + half_diag > r)
    if np.any(cut):
        off = (np.arange(sub) + 0.5) / sub - 0.5
        grid = np.stack(np.meshgrid(*([off] * (g.dim - 1)), indexing="ij"), axis=-1).reshape(-1, g.dim - 1)
        sp = rel[cut][:, None, :] + h * grid[None]
        frac[cut] = np.mean(np.linalg.norm(sp, axis=-1) <= r, axis=1)
    return frac


def coincidence_density(fb: FreeBoundarySet, center, r: float) -> float:
    """Contact area inside B'_r(center) over |B'_r|, weighting dual cells."""
    g = fb.grid
    c = np.asarray(center, dtype=float)
    if np.any(np.abs(c[:-1]) + r > g.extent * (1 + 1e-12)) or r < g.h:
        raise InadmissibleBall(f"thin disk of radius {r:g} about {tuple(c)} not admissible")
    frac = _dual_cell_fractions(g, c, r)
    area = float(np.sum(frac[fb.lambda_mask])) * g.h ** (g.dim - 1)
    m = g.dim - 1
    disk = 2.0 * r if m == 1 else math.pi * r * r
    return area / disk


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ClassificationThresholds:
    """Numerical widths for the frequency gap and the vanishing density.

    The density is read at ``density_radius``: the contact band of a
    threshold mask is about h^{3/4} wide, so smaller radii measure the band
    rather than the coincidence set.
    """

    gap: float = 0.15
    rho_sing: float = 0.1
    density_radius: float = 0.3
    quality_max: float = 0.05
    blowup_rungs: int = 3
    blowup_floor_cells: float = 8.0


@dataclass
class Classification:
    verdict: str
    kappa: float | None
    nhat_limit: float
    quality: float
    density: float
    density_trend: list
    center: tuple
    fit: BlowupFit | None = None
    notes: list = field(default_factory=list)

    @property
    def label(self) -> str:
        if self.verdict in ("Singular", "Other"):
            return f"{self.verdict}({self.kappa:g})"
        return self.verdict

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "label": self.label,
            "kappa": self.kappa,
            "nhat_limit": self.nhat_limit,
            "quality": self.quality,
            "density": self.density,
            "density_trend": [list(x) for x in self.density_trend],
            "center": list(self.center),
            "fit": self.fit.to_dict() if self.fit is not None else None,
            "notes": list(self.notes),
        }



def classifications_to_csv(items: list[Classification], dim: int) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"x{k + 1}" for k in range(dim)] + ["verdict", "nhat_limit", "quality", "density", "residual"])
    for c in items:
        res = c.fit.residual if c.fit is not None else float("nan")
        wr.writerow([repr(float(x)) for x in c.center]
                    + [c.label, repr(c.nhat_limit), repr(c.quality), repr(c.density), repr(res)])
    return buf.getvalue()


def classifications_from_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        d = {k: (v if k == "verdict" else float(v)) for k, v in r.items()}
        out.append(d)
    return out


def boundary_contact_nodes(fb: FreeBoundarySet) -> np.ndarray:
    """Contact nodes with a non-contact neighbour: the contact ends of gamma edges."""
    m = fb.lambda_mask
    edge = np.zeros_like(m)
    for ax in range(m.ndim):
        a = [slice(None)] * m.ndim
        b = [slice(None)] * m.ndim
        a[ax] = slice(None, -1)
        b[ax] = slice(1, None)
        change = m[tuple(a)] != m[tuple(b)]
        edge[tuple(a)] |= change & m[tuple(a)]
        edge[tuple(b)] |= change & m[tuple(b)]
    return fb.grid.thin_points()[edge]


def band_width(fb: FreeBoundarySet, u: GridFunction) -> float:
    """Half-width sqrt(tau / scale) of the contact band a quadratic touch leaves."""
    return math.sqrt(fb.threshold / u.scale)


def snap_center(fb: FreeBoundarySet, x0, keep_radius: float | None = None) -> tuple:
    """Move x0 to the contact end of the nearest gamma edge (a node where u
    vanishes), unless x0 is a contact node already within ``keep_radius`` of
    one; that keeps centres inside narrow contact bands such as the one a
    polynomial touching zero leaves."""
    g = fb.grid
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (g.dim,) or x0[-1] != 0.0:
        raise ValueError("classification centers must be thin-plane points")
    ends = boundary_contact_nodes(fb)
    if not len(ends):
        raise ValueError("field has no free boundary points to snap to")
    keep = g.h if keep_radius is None else keep_radius
    d = np.linalg.norm(ends - x0, axis=-1)
    contact = fb.contact_points
    is_contact = len(contact) and np.min(np.linalg.norm(contact - x0, axis=-1)) <= 1e-9 * g.h
    if is_contact and d.min() <= keep * (1 + 1e-9):
        return tuple(float(x) for x in x0)
    i = int(np.argmin(d))
    return tuple(float(x) for x in ends[i])


def _blowup_ladder(u: GridFunction, params: WeissParams, th: ClassificationThresholds) -> list[float]:
    floor = th.blowup_floor_cells * u.grid.h
    ladder = radius_ladder(params.t0, floor)
    if len(ladder) < th.blowup_rungs:
        ladder = np.geomspace(params.t0, floor, th.blowup_rungs)
    return [float(r) for r in ladder[-th.blowup_rungs:]]


def classify_point(u: GridFunction, x0, params: WeissParams,
                   thresholds: ClassificationThresholds | None = None,
                   fb: FreeBoundarySet | None = None) -> Classification:
    th = thresholds or ClassificationThresholds()
    fb = fb or coincidence_set(u)
    center = snap_center(fb, x0, band_width(fb, u) + u.grid.h)
    try:
        lim: FrequencyLimit = frequency_limit(u, center, params)
    except ValueError as e:
        # too few admissible rungs on this grid to extrapolate
        return Classification("Unresolved", None, float("nan"), float("inf"), float("nan"), [], center,
                              None, [str(e)])
    nh = lim.value
    notes = []
    density = coincidence_density(fb, center, min(th.density_radius, u.grid.extent - abs(center[0])))
    trend = []
    for r in sorted(lim.radii):
        try:
            trend.append((r, coincidence_density(fb, center, r)))
        except InadmissibleBall:
            continue
    if lim.saturated:
        notes.append("truncated at kappa0 on every rung")

    verdict, kappa = "Unresolved", None
    if lim.quality > th.quality_max:
        notes.append(f"extrapolation quality {lim.quality:.3g} above {th.quality_max:g}")
    elif abs(nh - 1.5) <= th.gap:
        verdict, kappa = "Regular", 1.5
    else:
        m = round(nh / 2.0)
        if m >= 1 and abs(nh - 2 * m) <= th.gap and 2 * m < params.kappa0 and density <= th.rho_sing:
            verdict, kappa = "Singular", float(2 * m)
        elif nh >= 2.0 - th.gap:
            verdict, kappa = "Other", float(nh)
    fit = None
    if verdict in ("Regular", "Singular"):
        bp = params.with_kappa(min(kappa, params.kappa0))
        res = blowup(u, center, kappa, _blowup_ladder(u, params, th), bp)
        w = res.limit_estimate
        fit = fit_regular_profile(w) if verdict == "Regular" else fit_singular_polynomial(w, int(kappa))
        if not res.converged:
            notes.append("rotation metric above threshold at the finest rung")
    return Classification(verdict, kappa, float(nh), float(lim.quality), float(density), trend, center, fit, notes)


# ---------------------------------------------------------------------------
# regular graph and singular dimension


@dataclass
class GraphFit:
    seed: tuple
    nu: tuple
    tangential: np.ndarray  # coordinate along the rotated e_1 (n=3)
    g: np.ndarray  # crossing offset along the seed normal
    points: np.ndarray  # crossing points in original coordinates
    normals: np.ndarray
    holder: dict

    def to_dict(self) -> dict:
        return {
            "seed": list(self.seed),
            "nu": list(self.nu),
            "tangential": self.tangential.tolist(),
            "g": self.g.tolist(),
            "points": self.points.tolist(),
            "normals": self.normals.tolist(),
            "holder": {str(k): v for k, v in self.holder.items()},
        }


def _crossing(u: GridFunction, base: np.ndarray, direction: np.ndarray, half: float, thr: float):
    """Offset along ``direction`` where the thin trace first rises above thr
    (scanning toward +direction), by linear interpolation."""
    h = u.grid.h
    s = np.arange(-half, half + 0.5 * h, h)
    pts = base[None, :] + s[:, None] * direction[None, :]
    vals = evaluate(u, pts) - thr
    above = vals > 0
    idx = np.nonzero(~above[:-1] & above[1:])[0]
    if not len(idx):
        return None
    i = idx[np.argmin(np.abs(s[idx]))]
    t = vals[i] / (vals[i] - vals[i + 1])
    return s[i] + t * h


def regular_graph_fit(u: GridFunction, seed: Classification, window: float,
                      gammas=(0.25, 0.5), fit_radius: float | None = None) -> GraphFit:
    """Free boundary near a regular seed as a graph over the rotated tangent line."""
    if seed.verdict != "Regular" or seed.fit is None:
        raise NotRegularSeed(f"seed verdict is {seed.label}, need Regular")
    g = u.grid
    c = np.asarray(seed.center)
    nu = np.asarray(seed.fit.nu, dtype=float)
    if g.dim == 2:
        pts = c[None, :]
        return GraphFit(seed.center, tuple(nu), np.zeros(1), np.zeros(1), pts, nu[None, :], {})
    thr = contact_threshold(u)
    perp = np.array([-nu[1], nu[0], 0.0])
    h = g.h
    taus = np.arange(-window, window + 0.5 * h, h)
    fit_radius = fit_radius or max(8 * h, 0.5 * window)
    g_vals, tang, pts, normals = [], [], [], []
    for t in taus:
        base = c + t * perp
        s = _crossing(u, base, nu, window, thr)
        if s is None:
            continue
        p = base + s * nu
        p[-1] = 0.0
        w = lambda xi, p=p: evaluate(u, p + fit_radius * xi) / fit_radius**1.5
        fit = fit_regular_profile(w, dim=g.dim)
        tang.append(t)
        g_vals.append(s)
        pts.append(p)
        normals.append(fit.nu)
    if not pts:
        raise NoCrossingInWindow("no free boundary crossing inside the window")
    pts = np.array(pts)
    normals = np.array(normals)
    holder = {}
    for gamma in gammas:
        table = {}
        for i, j in itertools.combinations(range(len(pts)), 2):
            d = float(np.linalg.norm(pts[i] - pts[j]))
            if d <= 0:
                continue
            q = float(np.linalg.norm(normals[i] - normals[j]) / d**gamma)
            level = int(math.floor(math.log2(d / h)))
            table[level] = max(table.get(level, 0.0), q)
        holder[gamma] = {k: table[k] for k in sorted(table)}
    return GraphFit(seed.center, tuple(nu), np.array(tang), np.array(g_vals), pts, normals, holder)


def singular_dimension(fit: BlowupFit, dim: int, require_in_q: bool = False) -> int:
    """(n-1) minus the rank of xi -> xi . grad' q on the polynomial's coefficients.

    The rank is algebraic, so by default a fit flagged NotInQ is still
    accepted; ``require_in_q`` restores the strict precondition.
    """
    if fit.kind != "singular" or (require_in_q and fit.not_in_q):
        raise NotSingularFit("singular dimension needs a singular fit")
    basis = exact.q_basis(dim, int(fit.kappa))
    q = exact.combine(basis, fit.coeffs)
    norm = math.sqrt(sum(v * v for v in q.values()))
    if norm == 0:
        raise NotSingularFit("fitted polynomial vanishes")
    monos = set()
    derivs = []
    for i in range(dim - 1):
        d = {}
        for mono, coef in q.items():
            if mono[i] > 0:
                m = list(mono)
                m[i] -= 1
                d[tuple(m)] = d.get(tuple(m), 0.0) + coef * mono[i]
        derivs.append(d)
        monos.update(d)
    monos = sorted(monos)
    M = np.array([[d.get(m, 0.0) for d in derivs] for m in monos]) if monos else np.zeros((1, dim - 1))
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > 1e-8 * norm))
    return (dim - 1) - rank
