"""
Batch front-end.

    signorini-lab solve|profile|classify|blowup --config exp.json --out DIR
    signorini-lab verify --suite NAME [--config exp.json] --out DIR

Exit codes: 0 ok, 1 configuration or input error, 2 numerical failure
(non-convergence, failed suite check). Artifacts are written before a
non-zero numerical exit. Wall-clock timings go to ``timing*.json`` only, so
every other output is byte-identical across reruns.

Thread count: ``SIGNORINI_LAB_THREADS``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import exact
from .errors import ConfigError, NonConvergence, SignoriniLabError
from .freeboundary import (
    ClassificationThresholds,
    classifications_to_csv,
    classify_point,
    coincidence_set,
)
from .functionals import WeissParams, profile, radius_ladder
from .grid import GridFunction, make_grid, read_field, write_field
from .rescale import UNIT_RESOLUTION, blowup, fit_regular_profile, fit_singular_polynomial
from .solver import (
    BoundaryData,
    CoefficientField,
    SolveOptions,
    solve_drift,
    solve_signorini,
    solve_weighted,
)

THREADS_ENV = "SIGNORINI_LAB_THREADS"
PROBLEMS = ("signorini", "drift", "weighted")


@dataclass(frozen=True)
class GridConfig:
    dim: int = 2
    resolution: int = 257
    extent: float = 1.0


@dataclass(frozen=True)
class WeightConfig:
    """a(x) = base + amplitude * |x|^power."""

    base: float = 1.0
    amplitude: float = 0.0
    power: float = 1.0

    def __call__(self, pts):
        return self.base + self.amplitude * np.linalg.norm(pts, axis=-1) ** self.power


@dataclass(frozen=True)
class RadiiConfig:
    values: tuple | None = None
    min: float | None = None  # default 8h
    max: float | None = None  # default min(t0, 0.4)
    count: int = 12
    spacing: str = "geometric"

    def resolve(self, h: float, t0: float) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        lo = 8 * h if self.min is None else self.min
        hi = min(t0, 0.4) if self.max is None else self.max
        if self.spacing == "linear":
            return np.linspace(lo, hi, self.count)
        return np.geomspace(lo, hi, self.count)


@dataclass(frozen=True)
class BlowupConfig:
    kappa: float = 1.5
    ladder: tuple | None = None  # default t0 * 2^-k down to 8h
    resolution: int = UNIT_RESOLUTION
    dump_fields: bool = False


@dataclass(frozen=True)
class ContactConfig:
    policy: str = "scaled"
    c_tau: float = 0.5
    tau: float | None = None


@dataclass(frozen=True)
class AnalysisConfig:
    centers: tuple = ((0.0, 0.0),)
    radii: RadiiConfig = field(default_factory=RadiiConfig)
    alpha: float = 1.9
    kappa0: float = 2.0
    kappa: float = 1.5
    t0: float = 1.0
    kappas: tuple = (1.5, 2.0)
    blowup: BlowupConfig = field(default_factory=BlowupConfig)
    classification: ClassificationThresholds = field(default_factory=ClassificationThresholds)
    contact: ContactConfig = field(default_factory=ContactConfig)

    def params(self, dim: int) -> WeissParams:
        return WeissParams(dim, self.alpha, self.kappa, self.kappa0, self.t0)


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    problem: str = "signorini"
    boundary: str | None = "regular32"  # exact-solution name or "file:<dump>"
    drift: tuple | None = None
    weight: WeightConfig | None = None
    solver: SolveOptions = field(default_factory=SolveOptions)
    input_field: str | None = None  # field dump or "exact:<name>" for the analysis commands
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    acceptance: dict = field(default_factory=dict)
    output: str | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q


# ---------------------------------------------------------------------------
# config parsing


def _build(cls, data, where: str):
    """Instantiate a dataclass from a JSON object, naming the offending key on error."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    kw = {}
    for key, val in data.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(f"unknown key {path!r}; allowed: {sorted(names)}")
        sub = _NESTED.get((cls, key))
        if sub is not None and val is not None:
            val = _build(sub, val, path)
        elif isinstance(val, list):
            val = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        kw[key] = val
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


_NESTED = {
    (ExperimentConfig, "grid"): GridConfig,
    (ExperimentConfig, "weight"): WeightConfig,
    (ExperimentConfig, "solver"): SolveOptions,
    (ExperimentConfig, "analysis"): AnalysisConfig,
    (AnalysisConfig, "radii"): RadiiConfig,
    (AnalysisConfig, "blowup"): BlowupConfig,
    (AnalysisConfig, "classification"): ClassificationThresholds,
    (AnalysisConfig, "contact"): ContactConfig,
}


def _require(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    g = cfg.grid
    _require(g.dim in (2, 3), "grid.dim", f"must be 2 or 3, got {g.dim!r}")
    _require(isinstance(g.resolution, int) and g.resolution >= 17 and g.resolution % 2 == 1,
             "grid.resolution", f"must be an odd integer >= 17, got {g.resolution!r}")
    _require(float(g.extent) > 0, "grid.extent", "must be positive")
    _require(cfg.problem in PROBLEMS, "problem", f"must be one of {PROBLEMS}, got {cfg.problem!r}")
    if cfg.problem == "drift":
        _require(cfg.drift is not None and len(cfg.drift) == g.dim, "drift", f"needs {g.dim} components")
    if cfg.problem == "weighted":
        _require(cfg.weight is not None, "weight", "required for problem 'weighted'")
        w = cfg.weight
        _require(w.base > 0 and w.amplitude >= 0 and w.power > 0, "weight",
                 "needs base > 0, amplitude >= 0, power > 0")
    if cfg.boundary is not None and cfg.boundary.startswith("file:"):
        p = cfg.path(cfg.boundary[5:])
        _require(p.with_suffix(".json").exists(), "boundary", f"field dump {p} does not exist")
    elif cfg.boundary is not None:
        try:
            exact.from_name(cfg.boundary, dim=g.dim)
        except (ConfigError, ValueError) as e:
            raise ConfigError(f"boundary: {e}") from None
    if cfg.input_field is not None and not cfg.input_field.startswith("exact:"):
        p = cfg.path(cfg.input_field)
        _require(p.with_suffix(".json").exists(), "input_field", f"field dump {p} does not exist")
    s = cfg.solver
    _require(s.ordering in ("red-black", "lexicographic"), "solver.ordering", f"unknown ordering {s.ordering!r}")
    _require(s.max_sweeps is None or (isinstance(s.max_sweeps, int) and s.max_sweeps >= 1),
             "solver.max_sweeps", "must be a positive integer")
    a = cfg.analysis
    _require(0 < a.alpha < 2, "analysis.alpha", "must lie in (0, 2)")
    _require(a.kappa0 >= a.kappa, "analysis.kappa0", "must be >= analysis.kappa")
    for i, c in enumerate(a.centers):
        _require(len(c) == g.dim, f"analysis.centers[{i}]", f"needs {g.dim} coordinates")
        _require(float(c[-1]) == 0.0, f"analysis.centers[{i}]", "centers must lie on the thin plane (x_n = 0)")
    _require(a.radii.spacing in ("geometric", "linear"), "analysis.radii.spacing", "geometric or linear")
    _require(a.contact.policy in ("scaled", "absolute"), "analysis.contact.policy", "scaled or absolute")
    return cfg


def parse_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        keys = re.findall(r'"([^"\\]+)"\s*:', text[: e.pos])
        near = f" near key {keys[-1]!r}" if keys else ""
        raise ConfigError(f"malformed JSON at line {e.lineno} column {e.colno}{near}: {e.msg}") from None
    cfg = _build(ExperimentConfig, data, "")
    return validate(dataclasses.replace(cfg, base_dir=Path(base_dir)))


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, path.parent)


# ---------------------------------------------------------------------------
# helpers


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def _boundary(cfg: ExperimentConfig, g) -> BoundaryData:
    if cfg.boundary is None:
        raise ConfigError("boundary: required for solve")
    if cfg.boundary.startswith("file:"):
        f = read_field(cfg.path(cfg.boundary[5:]))
        if f.grid.shape != g.shape:
            raise ConfigError(f"boundary: dump grid {f.grid.shape} differs from configured grid {g.shape}")
        return BoundaryData.from_field(f)
    return BoundaryData.from_exact(exact.from_name(cfg.boundary, dim=g.dim), g)


def _field(cfg: ExperimentConfig, out: Path) -> GridFunction:
    """Analysis input: configured dump, sampled exact field, or the solve output in ``out``."""
    g = make_grid(cfg.grid.dim, cfg.grid.resolution, cfg.grid.extent)
    if cfg.input_field is not None and cfg.input_field.startswith("exact:"):
        try:
            return exact.from_name(cfg.input_field[6:], dim=g.dim).on(g)
        except ValueError as e:
            raise ConfigError(f"input_field: {e}") from None
    p = cfg.path(cfg.input_field) if cfg.input_field is not None else out / "solution"
    if not p.with_suffix(".json").exists():
        raise ConfigError(f"input_field: no solution field at {p} (run solve first or set input_field)")
    return read_field(p)


def _params(cfg: ExperimentConfig, dim: int) -> WeissParams:
    try:
        return cfg.analysis.params(dim)
    except ValueError as e:
        raise ConfigError(f"analysis: {e}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: ExperimentConfig, out: Path) -> int:
    g = make_grid(cfg.grid.dim, cfg.grid.resolution, cfg.grid.extent)
    bd = _boundary(cfg, g)
    t = time.perf_counter()
    status = 0
    try:
        if cfg.problem == "drift":
            u, diag = solve_drift(g, bd, CoefficientField.drift(g, cfg.drift), cfg.solver)
        elif cfg.problem == "weighted":
            u, diag = solve_weighted(g, bd, CoefficientField.weight(g, cfg.weight), cfg.solver)
        else:
            u, diag = solve_signorini(g, bd, cfg.solver)
    except NonConvergence as e:
        u, diag, status = e.field, e.diagnostics, 2
        print(f"error: {e}", file=sys.stderr)
    write_field(u, out / "solution")
    _dump(out / "diagnostics.json", diag.to_dict())
    _dump(out / "timing.json", {"solve_seconds": time.perf_counter() - t})
    print(f"solve: converged={diag.converged} sweeps={diag.sweeps_used} -> {out / 'solution.json'}")
    return status


def cmd_profile(cfg: ExperimentConfig, out: Path) -> int:
    u = _field(cfg, out)
    params = _params(cfg, u.grid.dim)
    radii = cfg.analysis.radii.resolve(u.grid.h, params.t0)
    for i, c in enumerate(cfg.analysis.centers):
        pr = profile(u, tuple(float(x) for x in c), radii, params, kappas=cfg.analysis.kappas)
        csv_path, _ = pr.write(out / f"profile_{i}.csv")
        print(f"profile: center {tuple(c)} -> {csv_path}")
    return 0


def cmd_classify(cfg: ExperimentConfig, out: Path) -> int:
    u = _field(cfg, out)
    params = _params(cfg, u.grid.dim)
    ct = cfg.analysis.contact
    fb = coincidence_set(u, ct.policy, ct.c_tau, ct.tau)
    items = []
    for c in cfg.analysis.centers:
        items.append(classify_point(u, tuple(float(x) for x in c), params, cfg.analysis.classification, fb))
    out.mkdir(parents=True, exist_ok=True)
    (out / "classification.csv").write_text(classifications_to_csv(items, u.grid.dim))
    _dump(out / "classification.json", [it.to_dict() for it in items])
    (out / "free_boundary.csv").write_text(fb.to_csv())
    for it in items:
        print(f"classify: {tuple(it.center)} {it.label} nhat={it.nhat_limit:.4f} density={it.density:.4f}")
    return 0


def cmd_blowup(cfg: ExperimentConfig, out: Path) -> int:
    u = _field(cfg, out)
    bc = cfg.analysis.blowup
    params = _params(cfg, u.grid.dim).with_kappa(min(bc.kappa, cfg.analysis.kappa0))
    ladder = bc.ladder if bc.ladder is not None else radius_ladder(params.t0, 8 * u.grid.h)
    for i, c in enumerate(cfg.analysis.centers):
        res = blowup(u, tuple(float(x) for x in c), bc.kappa, ladder, params, resolution=bc.resolution)
        record = res.to_dict()
        record["metrics_decreasing"] = res.metrics_decreasing
        w = res.limit_estimate
        if bc.kappa == 1.5:
            record["fit"] = fit_regular_profile(w).to_dict()
        elif float(bc.kappa).is_integer() and bc.kappa % 2 == 0:
            record["fit"] = fit_singular_polynomial(w, int(bc.kappa)).to_dict()
        _dump(out / f"blowup_{i}.json", record)
        if bc.dump_fields:
            for k, f in enumerate(res.fields):
                write_field(f, out / f"blowup_{i}_rung{k}")
        print(f"blowup: center {tuple(c)} metrics={['%.3g' % m for m in res.rotation_metrics]} -> blowup_{i}.json")
    return 0


def cmd_verify(suite: str, cfg: ExperimentConfig | None, out: Path) -> int:
    from .suites import AcceptanceSettings, Context, resolve, run_suite

    try:
        name = resolve(suite)
    except KeyError as e:
        raise ConfigError(str(e.args[0])) from None
    settings = _build(AcceptanceSettings, cfg.acceptance, "acceptance") if cfg is not None else AcceptanceSettings()
    rep = run_suite(name, Context(settings))
    out.mkdir(parents=True, exist_ok=True)
    (out / f"verify_{name}.json").write_text(rep.to_json())
    (out / f"verify_{name}.txt").write_text(rep.text())
    _dump(out / f"timing_{name}.json", rep.timing)
    print(rep.summary())
    return 0 if rep.passed else 2


COMMANDS = ("solve", "profile", "classify", "blowup", "verify")


def _configure_threads() -> None:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="signorini-lab", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "verify", help="experiment JSON")
        sp.add_argument("--out", help="output directory (default: config 'output' or '.')")
        if name == "verify":
            sp.add_argument("--suite", required=True, help="suite name or criterion number")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _configure_threads()
        cfg = load_config(args.config) if args.config else None
        out = Path(args.out or (cfg.output if cfg is not None and cfg.output else "."))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            return cmd_verify(args.suite, cfg, out)
        return {"solve": cmd_solve, "profile": cmd_profile, "classify": cmd_classify,
                "blowup": cmd_blowup}[args.command](cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (SignoriniLabError, ValueError, ArithmeticError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
