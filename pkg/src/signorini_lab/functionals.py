"""
Concentric-ball functionals: energy D, boundary mass H, the frequency N and
its gauge-corrected and truncated versions, the Weiss family W_kappa, the pure
Weiss energy W0 and the epiperimetric comparison.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBoundaryMass, InadmissibleBall
from .grid import BallSpec, GridFunction, ball_energy, check_ball, sphere_mass

DEGENERACY_FLOOR = 1e-14
MONOTONICITY_SLACK = 1e-3
PROFILE_COLUMNS = ("r", "H", "D", "N", "Ntilde", "Nhat", "W_1p5", "W_2", "m_1p5", "m_2", "degenerate")


@dataclass(frozen=True)
class WeissParams:
    """Gauge exponent alpha, homogeneity kappa and truncation level kappa0.

    ``t0`` is the configured upper radius; the effective one is capped at
    (2b)^{-1/alpha} so that 1 - b t^alpha >= 1/2 on every admissible radius.
    """

    n: int
    alpha: float
    kappa: float = 1.5
    kappa0: float = 2.0
    t0_config: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.kappa0 < 2.0:
            raise ValueError(f"kappa0 must be >= 2, got {self.kappa0}")
        if not 0.0 < self.kappa <= self.kappa0:
            raise ValueError(f"kappa must lie in (0, kappa0], got {self.kappa}")
        if not self.t0_config > 0:
            raise ValueError("t0 must be positive")

    @property
    def a(self) -> float:
        return (self.n + 2.0 * self.kappa - 2.0) / self.alpha

    @property
    def b(self) -> float:
        return (self.n + 2.0 * self.kappa0) / self.alpha

    @property
    def t0(self) -> float:
        return min(self.t0_config, (2.0 * self.b) ** (-1.0 / self.alpha))

    def with_kappa(self, kappa: float) -> "WeissParams":
        return WeissParams(self.n, self.alpha, kappa, self.kappa0, self.t0_config)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(a=self.a, b=self.b, t0=self.t0)
        return d


@dataclass(frozen=True)
class RegularityParams:
    """Exponents of the regularity theory; delta and gamma are slots filled
    only by fits that estimate them."""

    n: int
    alpha: float
    gauge_constant: float = 1.0
    delta: float | None = None

    @property
    def beta(self) -> float:
        return self.alpha / (4.0 * (2.0 * self.n + self.alpha))

    @property
    def gamma(self) -> float | None:
        return None if self.delta is None else self.delta / (self.delta + 2.0)


def _ball(u: GridFunction, ball) -> BallSpec:
    if isinstance(ball, BallSpec):
        return ball
    center, r = ball
    return BallSpec(tuple(center), r)


def _masses(u: GridFunction, ball: BallSpec) -> tuple[float, float]:
    return sphere_mass(u, ball), ball_energy(u, ball)


def _check_mass(u: GridFunction, H: float, r: float) -> None:
    if H <= DEGENERACY_FLOOR * u.scale**2:
        raise DegenerateBoundaryMass(f"boundary mass {H:.3e} at r={r:g} below the degeneracy floor")


def frequency(u: GridFunction, ball) -> float:
    """N = r D / H."""
    ball = _ball(u, ball)
    H, D = _masses(u, ball)
    _check_mass(u, H, ball.radius)
    return ball.radius * D / H


def adjusted_frequency(N: float, r: float, params: WeissParams) -> float:
    return N / (1.0 - params.b * r**params.alpha)


def truncate(N: float, r: float, params: WeissParams) -> float:
    """min(N / (1 - b r^alpha), kappa0); pure arithmetic."""
    return min(adjusted_frequency(N, r, params), params.kappa0)


def _check_t0(r: float, params: WeissParams) -> None:
    if r > params.t0 * (1 + 1e-12):
        raise InadmissibleBall(f"radius {r:g} exceeds t0 = {params.t0:g}")


def truncated_frequency(u: GridFunction, ball, params: WeissParams) -> float:
    ball = _ball(u, ball)
    _check_t0(ball.radius, params)
    return truncate(frequency(u, ball), ball.radius, params)


def weiss_value(D: float, H: float, t: float, params: WeissParams, kappa: float | None = None) -> float:
    """e^{a t^alpha} / t^{n+2k-2} [D - k (1 - b t^alpha) H / t]."""
    k = params.kappa if kappa is None else kappa
    p = params.with_kappa(k)
    ta = t**p.alpha
    return math.exp(p.a * ta) / t ** (p.n + 2 * k - 2) * (D - k * (1.0 - p.b * ta) * H / t)


def weiss(u: GridFunction, ball, params: WeissParams, kappa: float | None = None) -> float:
    ball = _ball(u, ball)
    _check_t0(ball.radius, params)
    H, D = _masses(u, ball)
    return weiss_value(D, H, ball.radius, params, kappa)


def weiss0(w: GridFunction, kappa: float, ball: BallSpec | None = None) -> float:
    """D - kappa H on the unit ball (or the given ball)."""
    ball = ball or BallSpec.at_origin(w.grid.dim, 1.0)
    H, D = _masses(w, ball)
    return D - kappa * H


def homogeneous_weiss(t: float, M: float, params: WeissParams, kappa: float | None = None) -> float:
    """W_kappa of an exact kappa-homogeneous field with unit-sphere mass M."""
    k = params.kappa if kappa is None else kappa
    p = params.with_kappa(k)
    return math.exp(p.a * t**p.alpha) * k * p.b * t**p.alpha * M


# ---------------------------------------------------------------------------
# profiles


def _kappa_tag(k: float) -> str:
    return f"{k:g}".replace(".", "p")


@dataclass
class FrequencyProfile:
    center: tuple
    params: WeissParams
    kappas: tuple
    radii: np.ndarray
    H: np.ndarray
    D: np.ndarray
    N: np.ndarray
    Ntilde: np.ndarray
    Nhat: np.ndarray
    W: dict
    m: dict
    degenerate: np.ndarray

    def columns(self) -> list[str]:
        cols = ["r", "H", "D", "N", "Ntilde", "Nhat"]
        cols += [f"W_{_kappa_tag(k)}" for k in self.kappas]
        cols += [f"m_{_kappa_tag(k)}" for k in self.kappas]
        return cols + ["degenerate"]

    def rows(self):
        for i, r in enumerate(self.radii):
            row = [r, self.H[i], self.D[i], self.N[i], self.Ntilde[i], self.Nhat[i]]
            row += [self.W[k][i] for k in self.kappas]
            row += [self.m[k][i] for k in self.kappas]
            yield row + [bool(self.degenerate[i])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns())
        for row in self.rows():
            wr.writerow([repr(float(x)) if not isinstance(x, bool) else int(x) for x in row])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {"center": list(self.center), "kappas": list(self.kappas), "params": self.params.to_dict()}

    def write(self, path: str | Path) -> tuple[Path, Path]:
        path = Path(path)
        path.write_text(self.to_csv())
        side = path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path, side

    @classmethod
    def from_csv(cls, text: str, sidecar: dict) -> "FrequencyProfile":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        data = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
        kappas = tuple(float(k) for k in sidecar["kappas"])
        p = sidecar["params"]
        params = WeissParams(p["n"], p["alpha"], p["kappa"], p["kappa0"], p["t0_config"])
        return cls(
            center=tuple(sidecar["center"]),
            params=params,
            kappas=kappas,
            radii=data["r"],
            H=data["H"],
            D=data["D"],
            N=data["N"],
            Ntilde=data["Ntilde"],
            Nhat=data["Nhat"],
            W={k: data[f"W_{_kappa_tag(k)}"] for k in kappas},
            m={k: data[f"m_{_kappa_tag(k)}"] for k in kappas},
            degenerate=data["degenerate"].astype(bool),
        )

    @classmethod
    def read(cls, path: str | Path) -> "FrequencyProfile":
        path = Path(path)
        return cls.from_csv(path.read_text(), json.loads(path.with_suffix(".json").read_text()))


def profile(u: GridFunction, center, radii, params: WeissParams, kappas=(1.5, 2.0)) -> FrequencyProfile:
    """All concentric-ball quantities on a radius list.

    Rows whose ball is inadmissible on the grid or whose boundary mass is
    below the floor are flagged degenerate and filled with NaN. Gauge-corrected
    columns are NaN above t0.
    """
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size == 0:
        raise ValueError("profile needs at least one radius")
    nan = lambda: np.full(radii.size, np.nan)
    H, D, N, Nt, Nh = nan(), nan(), nan(), nan(), nan()
    W = {k: nan() for k in kappas}
    m = {k: nan() for k in kappas}
    degenerate = np.zeros(radii.size, dtype=bool)
    n = u.grid.dim
    for i, r in enumerate(radii):
        ball = BallSpec(tuple(center), r)
        try:
            check_ball(u.grid, ball)
        except InadmissibleBall:
            degenerate[i] = True
            continue
        H[i], D[i] = _masses(u, ball)
        if H[i] <= DEGENERACY_FLOOR * u.scale**2:
            degenerate[i] = True
            continue
        N[i] = r * D[i] / H[i]
        for k in kappas:
            m[k][i] = math.sqrt(H[i] / r ** (n + 2 * k - 1))
        if r <= params.t0 * (1 + 1e-12):
            Nt[i] = adjusted_frequency(N[i], r, params)
            Nh[i] = min(Nt[i], params.kappa0)
            for k in kappas:
                W[k][i] = weiss_value(D[i], H[i], r, params, k)
    return FrequencyProfile(tuple(center), params, tuple(kappas), radii, H, D, N, Nt, Nh, W, m, degenerate)


def is_nondecreasing(values, slack: float) -> bool:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return bool(np.all(np.diff(v) >= -slack))


# ---------------------------------------------------------------------------
# limits and slopes


@dataclass
class FrequencyLimit:
    value: float
    quality: float
    radii: list
    nhat: list
    fitted: int
    saturated: bool = False

    @property
    def good(self) -> bool:
        return self.quality <= 0.05


def radius_ladder(r_max: float, r_min: float, ratio: float = 2.0) -> np.ndarray:
    out = []
    r = r_max
    while r >= r_min * (1 - 1e-12):
        out.append(r)
        r /= ratio
    return np.array(out)


def frequency_limit(u: GridFunction, center, params: WeissParams, r_max: float | None = None,
                    min_points: int = 5) -> FrequencyLimit:
    """N^(0+) from a geometric ladder r_max 2^{-k} down to 4h.

    The truncated frequency is fitted linearly in r^alpha over the rungs where
    truncation is inactive; the intercept is the estimate and the RMS fit
    residual is the quality (smaller is better). If every rung is truncated
    the estimate is kappa0 and the result is marked saturated.
    """
    h = u.grid.h
    r_max = params.t0 if r_max is None else min(r_max, params.t0)
    ladder = radius_ladder(r_max, 4.0 * h)
    radii, vals = [], []
    for r in ladder:
        ball = BallSpec(tuple(center), float(r))
        try:
            check_ball(u.grid, ball)
            vals.append(truncated_frequency(u, ball, params))
            radii.append(float(r))
        except (InadmissibleBall, DegenerateBoundaryMass):
            continue
    if len(radii) < min_points:
        if not radii:
            raise DegenerateBoundaryMass("no admissible radius with nondegenerate boundary mass")
        raise ValueError(f"only {len(radii)} admissible ladder radii, need {min_points}")
    radii_a = np.array(radii)
    vals_a = np.array(vals)
    free = vals_a < params.kappa0
    if np.count_nonzero(free) < 2:
        return FrequencyLimit(float(params.kappa0), 0.0, radii, vals, int(np.count_nonzero(free)), True)
    x = radii_a[free] ** params.alpha
    y = vals_a[free]
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    quality = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return FrequencyLimit(float(coef[0]), quality, radii, vals, int(free.sum()))


def growth_slope(u: GridFunction, center, radii, which: str = "H") -> float:
    """Log-log least-squares slope of H(r) or D(r)."""
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4:
        raise ValueError("growth_slope needs at least 4 radii")
    vals = []
    for r in radii:
        ball = BallSpec(tuple(center), float(r))
        if which == "H":
            v = sphere_mass(u, ball)
            _check_mass(u, v, r)
        elif which == "D":
            v = ball_energy(u, ball)
        else:
            raise ValueError(f"which must be 'H' or 'D', got {which!r}")
        vals.append(v)
    return float(np.polyfit(np.log(radii), np.log(vals), 1)[0])


# ---------------------------------------------------------------------------
# epiperimetric comparison


@dataclass
class EpiperimetricResult:
    lhs: float
    rhs: float
    passed: bool
    w_energy: float
    v_energy: float
    eta: float
    tol: float


def epiperimetric_check(u: GridFunction, ball, eta: float | None = None, opts=None,
                        unit_resolution: int = 129, tol_factor: float = MONOTONICITY_SLACK) -> EpiperimetricResult:
    """Compare W0_{3/2} of the Signorini minimizer v with that of the
    3/2-homogeneous extension w of the same trace, both on the unit ball.

    Passes iff W0(v) <= (1 - eta) W0(w) + tol, tol = tol_factor * scale. The
    comparison is the same for either sign of W0(w).
    """
    from .rescale import RescaleSpec, homogeneous_extension_on, rescale_field
    from .solver import signorini_replacement

    ball = _ball(u, ball)
    n = u.grid.dim
    eta = 1.0 / (2 * n + 3) if eta is None else eta
    spec = RescaleSpec("homogeneous", ball.center, ball.radius, kappa=1.5)
    f = rescale_field(u, spec, resolution=unit_resolution)
    unit = BallSpec.at_origin(n, 1.0)
    w = homogeneous_extension_on(f, 1.0, 1.5)
    v = signorini_replacement(w, unit, opts)
    W0w = weiss0(w, 1.5, unit)
    W0v = weiss0(v, 1.5, unit)
    tol = tol_factor * f.scale
    rhs = (1.0 - eta) * W0w
    return EpiperimetricResult(W0v, rhs, bool(W0v <= rhs + tol), W0w, W0v, eta, tol)
