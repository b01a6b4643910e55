"""Declarative experiment files: parsing, validation and execution."""

from __future__ import annotations

import json
import logging
import math
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .classical import IntegratorConfig, auto_conformal_exponent, correspondence_check
from .diffgeo import MetricField, schwarz_residual
from .errors import DKError, ParseError, ValidationError
from .expressions import parse
from .quantum import Grid1D, default_probe_pairs, discretize_hamiltonian, resolvent_dk_check, zero_mode_spectral_check
from .smoothmap import ExpressionMap
from .transform import CONTRACTIONS, SystemSpec, TransformSpec, quantum_correction_direct, quantum_potential_geometric, sample_grid

log = logging.getLogger(__name__)

SUMMARY_VERSION = "dktransform-summary/1"
EXPERIMENT_KINDS = ("correspondence", "spectra", "resolvent", "geometry-audit")


@dataclass(frozen=True)
class GridDecl:
    x_min: float
    x_max: float
    n: int

    def build(self, grid_scale: float = 1.0) -> Grid1D:
        return Grid1D(self.x_min, self.x_max, max(16, int(round(self.n * grid_scale))))


@dataclass(frozen=True)
class CorrespondenceExperiment:
    x0: tuple
    v0: tuple
    span: float
    threshold: float = 1e-6
    walls: str = "stop"
    method: str = "adaptive-RK"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    wall_margin: float = 1e-2
    samples: int = 2001
    kind: str = "correspondence"


@dataclass(frozen=True)
class SpectraExperiment:
    grid_i: GridDecl
    grid_f: GridDecl
    levels: int = 3
    threshold: float = 1e-4
    kind: str = "spectra"


@dataclass(frozen=True)
class ResolventExperiment:
    grid_i: GridDecl
    grid_f: GridDecl
    energy: float | None = None
    energy_factor: float = 2.0
    pairs: tuple | None = None
    threshold: float = 1e-3
    prefactor_exponent: float | None = None
    refine: bool = True
    kind: str = "resolvent"


@dataclass(frozen=True)
class GeometryAuditExperiment:
    points_per_axis: int = 5
    random_points: int = 20
    threshold: float = 1e-8
    kind: str = "geometry-audit"


@dataclass
class Scenario:
    name: str
    initial_system: SystemSpec
    transform: TransformSpec
    exponent_mode: str | int
    experiments: list
    output_dir: str | None = None
    seed: int = 0
    document: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        """Canonical document with every default filled in."""
        return canonical_document(self.document)


# -- parsing --------------------------------------------------------------------------


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def add(self, path: str, message: str):
        self.errors.append(f"{path}: {message}")


def _number(doc, key, path, errs, default=None, positive=False, integer=False, required=False):
    if key not in doc or doc[key] is None:
        if required:
            errs.add(f"{path}.{key}", "is required")
        return default
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        errs.add(f"{path}.{key}", f"expected a number, got {val!r}")
        return default
    if integer and int(val) != val:
        errs.add(f"{path}.{key}", "expected an integer")
        return default
    if not math.isfinite(val):
        errs.add(f"{path}.{key}", "must be finite")
        return default
    if positive and val <= 0:
        errs.add(f"{path}.{key}", "must be positive")
        return default
    return int(val) if integer else float(val)


def _domain(doc, key, dim, path, errs):
    raw = doc.get(key)
    if raw is None:
        return None
    ok = isinstance(raw, list) and len(raw) == dim and all(
        isinstance(p, list) and len(p) == 2 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)
        for p in raw
    )
    if not ok:
        errs.add(f"{path}.{key}", f"expected {dim} [lo, hi] pairs")
        return None
    if any(lo >= hi for lo, hi in raw):
        errs.add(f"{path}.{key}", "every pair needs lo < hi")
        return None
    return tuple((float(lo), float(hi)) for lo, hi in raw)


def _expressions(raw, shape, variables, params, path, errs):
    """Parse a nested list of expression strings with the given shape."""
    arr = np.array(raw, dtype=object)
    if arr.shape != shape:
        errs.add(path, f"expected shape {list(shape)}, got {list(arr.shape)}")
        return None
    out = np.empty(shape, dtype=object)
    failed = False
    for idx in np.ndindex(*shape) if shape else [()]:
        text = arr[idx]
        where = path + "".join(f"[{i}]" for i in idx)
        try:
            out[idx] = parse(text, variables, params, field=where)
        except ParseError as exc:
            errs.add(where, str(exc))
            failed = True
    if failed:
        return None
    return ExpressionMap(out, variables, shape)


def _parameters(doc, path, errs):
    params = doc.get("parameters", {}) or {}
    if not isinstance(params, dict):
        errs.add(f"{path}.parameters", "expected an object of name: number")
        return {}
    clean = {}
    for k, v in params.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errs.add(f"{path}.parameters.{k}", "expected a number")
        else:
            clean[k] = float(v)
    return clean


def _system(doc, errs, extra_params):
    path = "initial_system"
    if not isinstance(doc, dict):
        errs.add(path, "expected an object")
        return None, None
    dim = _number(doc, "dim", path, errs, integer=True, required=True)
    if dim is None or dim < 1:
        if dim is not None:
            errs.add(f"{path}.dim", "must be at least 1")
        return None, None
    params = {**extra_params, **_parameters(doc, path, errs)}
    qv = [f"q{i + 1}" for i in range(dim)]
    metric_raw = doc.get("metric", [["1" if i == j else "0" for j in range(dim)] for i in range(dim)])
    if dim == 1 and not isinstance(metric_raw, list):
        metric_raw = [[metric_raw]]
    metric = _expressions(metric_raw, (dim, dim), qv, params, f"{path}.metric", errs)
    if "scalar_potential" not in doc:
        errs.add(f"{path}.scalar_potential", "is required")
        V = None
    else:
        V = _expressions(doc["scalar_potential"], (), qv, params, f"{path}.scalar_potential", errs)
    A = None
    if doc.get("vector_potential") is not None:
        A = _expressions(doc["vector_potential"], (dim,), qv, params, f"{path}.vector_potential", errs)
    mass = _number(doc, "mass", path, errs, default=1.0, positive=True)
    hbar = _number(doc, "hbar", path, errs, default=0.0)
    if hbar is not None and hbar < 0:
        errs.add(f"{path}.hbar", "must be non-negative")
        hbar = None
    domain = _domain(doc, "domain", dim, path, errs)
    if domain is None and "domain" not in doc:
        errs.add(f"{path}.domain", "is required (singular loci must be excluded explicitly)")
    if metric is None or V is None or mass is None or hbar is None or domain is None:
        return None, dim
    if doc.get("vector_potential") is not None and A is None:
        return None, dim
    if not _symmetric(metric):
        errs.add(f"{path}.metric", "must be symmetric")
        return None, dim
    sys = SystemSpec(MetricField(metric), V, A, mass, hbar, domain)
    try:
        pts = sample_grid(domain, 5 if dim < 3 else 3)
        with np.errstate(all="ignore"):
            g = metric.eval(pts)
            eig = np.linalg.eigvalsh(g) if np.all(np.isfinite(g)) else None
            vv = V.eval(pts)
        if eig is None or np.any(eig <= 0):
            errs.add(f"{path}.metric", "must be positive definite on the domain")
        if not np.all(np.isfinite(vv)):
            errs.add(f"{path}.scalar_potential", "is not finite on the domain (exclude singular points)")
    except (DKError, ValueError, np.linalg.LinAlgError) as exc:
        errs.add(path, f"not evaluable on the domain: {exc}")
    return sys, dim


def _symmetric(metric: ExpressionMap) -> bool:
    comps = metric.components
    d = comps.shape[0]
    return all(comps[i, j].to_string() == comps[j, i].to_string() for i in range(d) for j in range(d))


def _transform(doc, dim, errs, extra_params):
    path = "transform"
    if not isinstance(doc, dict):
        errs.add(path, "expected an object")
        return None, None
    if dim is None:
        return None, None
    params = {**extra_params, **_parameters(doc, path, errs)}
    Qv = [f"Q{i + 1}" for i in range(dim)]
    qv = [f"q{i + 1}" for i in range(dim)]

    def vec(raw):
        return [raw] if dim == 1 and isinstance(raw, str) else raw

    if "space_map" not in doc:
        errs.add(f"{path}.space_map", "is required")
        q = None
    else:
        q = _expressions(vec(doc["space_map"]), (dim,), Qv, params, f"{path}.space_map", errs)
    inv = None
    if doc.get("inverse_map") is not None:
        inv = _expressions(vec(doc["inverse_map"]), (dim,), qv, params, f"{path}.inverse_map", errs)
    if "time_scale" not in doc:
        errs.add(f"{path}.time_scale", "is required")
        f = None
    else:
        f = _expressions(doc["time_scale"], (), Qv, params, f"{path}.time_scale", errs)
    energy = _number(doc, "energy", path, errs, default=0.0)
    mode = doc.get("conformal_exponent", "auto")
    if mode not in ("auto", 1, -1):
        errs.add(f"{path}.conformal_exponent", "must be 'auto', 1 or -1")
        mode = None
    domain = _domain(doc, "domain", dim, path, errs)
    if "domain" not in doc:
        errs.add(f"{path}.domain", "is required")
    if q is None or f is None or energy is None or mode is None or domain is None:
        return None, mode
    if "inverse_map" in doc and doc["inverse_map"] is not None and inv is None:
        return None, mode
    tr = TransformSpec(q, f, energy, inv, -1 if mode == "auto" else mode, domain)
    try:
        with np.errstate(all="ignore"):
            problems = tr.validate()
    except (DKError, ValueError, np.linalg.LinAlgError) as exc:
        problems = [f"not evaluable on the domain: {exc}"]
    for p in problems:
        key = "time_scale" if "time scale" in p else ("inverse_map" if "inverse" in p else "space_map")
        errs.add(f"{path}.{key}", p)
    return (tr if not problems else None), mode


def _grid(doc, key, path, errs):
    raw = doc.get(key)
    if not isinstance(raw, dict):
        errs.add(f"{path}.{key}", "expected an object with x_min, x_max, n")
        return None
    sub = f"{path}.{key}"
    lo = _number(raw, "x_min", sub, errs, required=True)
    hi = _number(raw, "x_max", sub, errs, required=True)
    n = _number(raw, "n", sub, errs, integer=True, required=True)
    if None in (lo, hi, n):
        return None
    if lo >= hi:
        errs.add(sub, "needs x_min < x_max")
        return None
    if n < 16:
        errs.add(f"{sub}.n", "must be at least 16")
        return None
    return GridDecl(lo, hi, n)


def _vector(doc, key, dim, path, errs):
    raw = doc.get(key)
    if isinstance(raw, (int, float)) and not isinstance(raw, bool) and dim == 1:
        raw = [raw]
    if not (isinstance(raw, list) and len(raw) == (dim or 0) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw)):
        errs.add(f"{path}.{key}", f"expected {dim} numbers")
        return None
    return tuple(float(v) for v in raw)


def _experiment(doc, i, sys, tr, dim, errs):
    path = f"experiments[{i}]"
    if not isinstance(doc, dict):
        errs.add(path, "expected an object")
        return None
    kind = doc.get("type")
    if kind not in EXPERIMENT_KINDS:
        errs.add(f"{path}.type", f"must be one of {list(EXPERIMENT_KINDS)}")
        return None
    known = {
        "correspondence": {"type", "x0", "v0", "span", "threshold", "walls", "method", "rel_tol", "abs_tol", "wall_margin", "samples"},
        "spectra": {"type", "grid_i", "grid_f", "levels", "threshold"},
        "resolvent": {"type", "grid_i", "grid_f", "energy", "energy_factor", "pairs", "threshold", "prefactor_exponent", "refine"},
        "geometry-audit": {"type", "points_per_axis", "random_points", "threshold"},
    }[kind]
    for extra in sorted(set(doc) - known):
        errs.add(f"{path}.{extra}", "unknown parameter")
    if kind == "correspondence":
        x0 = _vector(doc, "x0", dim, path, errs)
        v0 = _vector(doc, "v0", dim, path, errs)
        span = _number(doc, "span", path, errs, positive=True, required=True)
        kw = {}
        for key, integer in (("threshold", False), ("rel_tol", False), ("abs_tol", False), ("wall_margin", False), ("samples", True)):
            val = _number(doc, key, path, errs, positive=True, integer=integer)
            if val is not None:
                kw[key] = val
        for key, options in (("walls", ("stop", "reflect")), ("method", ("adaptive-RK", "fixed-step-symplectic"))):
            if key in doc:
                if doc[key] not in options:
                    errs.add(f"{path}.{key}", f"must be one of {list(options)}")
                else:
                    kw[key] = doc[key]
        if kw.get("walls") == "reflect" and dim != 1:
            errs.add(f"{path}.walls", "reflecting walls need dim = 1")
        if kw.get("samples", 2001) < 2:
            errs.add(f"{path}.samples", "must be at least 2")
        if x0 is None or v0 is None or span is None:
            return None
        if sys is not None and sys.domain is not None:
            if any(not lo < x < hi for x, (lo, hi) in zip(x0, sys.domain)):
                errs.add(f"{path}.x0", "must lie inside the initial domain")
        if sys is not None and tr is not None and sys.domain is not None:
            try:
                e = float(sys.energy(np.array(x0), np.array(v0)))
                if abs(e - tr.energy) > 1e-6 * max(abs(e), abs(tr.energy), 1e-300):
                    errs.add(f"{path}.x0", f"initial orbit energy {e!r} differs from transform.energy {tr.energy!r}")
            except (DKError, ValueError) as exc:
                errs.add(f"{path}.x0", f"energy not evaluable: {exc}")
        return CorrespondenceExperiment(x0, v0, span, **kw)
    if kind in ("spectra", "resolvent"):
        if dim is not None and dim != 1:
            errs.add(f"{path}.type", "quantum experiments need dim = 1")
        if sys is not None and sys.hbar <= 0:
            errs.add("initial_system.hbar", f"must be positive for the {kind} experiment")
        gi = _grid(doc, "grid_i", path, errs)
        gf = _grid(doc, "grid_f", path, errs)
        thr = _number(doc, "threshold", path, errs, positive=True)
        if kind == "spectra":
            levels = _number(doc, "levels", path, errs, default=3, positive=True, integer=True)
            if gi is None or gf is None or levels is None:
                return None
            return SpectraExperiment(gi, gf, levels, **({"threshold": thr} if thr else {}))
        energy = _number(doc, "energy", path, errs)
        factor = _number(doc, "energy_factor", path, errs, default=2.0)
        beta = _number(doc, "prefactor_exponent", path, errs)
        refine = doc.get("refine", True)
        if not isinstance(refine, bool):
            errs.add(f"{path}.refine", "expected true or false")
        pairs = doc.get("pairs")
        if pairs is not None:
            ok = isinstance(pairs, list) and all(
                isinstance(p, list) and len(p) == 2 and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p) for p in pairs
            ) and len(pairs) > 0
            if not ok:
                errs.add(f"{path}.pairs", "expected a non-empty list of [q, q0] pairs")
                pairs = None
            else:
                pairs = tuple((float(a), float(b)) for a, b in pairs)
                if gi is not None:
                    lo, hi = gi.x_min, gi.x_max
                    inner = (lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo))
                    if any(not inner[0] <= v <= inner[1] for p in pairs for v in p):
                        log.warning("probe pairs reach outside the inner 60 percent of the box")
                    if any(not lo < v < hi for p in pairs for v in p):
                        errs.add(f"{path}.pairs", "probe points must lie inside grid_i")
        if gi is None or gf is None:
            return None
        kw = {"threshold": thr} if thr else {}
        return ResolventExperiment(gi, gf, energy, factor, pairs, prefactor_exponent=beta, refine=bool(refine), **kw)
    ppa = _number(doc, "points_per_axis", path, errs, default=5, positive=True, integer=True)
    rnd = _number(doc, "random_points", path, errs, default=20, integer=True)
    thr = _number(doc, "threshold", path, errs, default=1e-8, positive=True)
    if rnd is not None and rnd < 0:
        errs.add(f"{path}.random_points", "must be non-negative")
    if None in (ppa, rnd, thr):
        return None
    return GeometryAuditExperiment(ppa, rnd, thr)


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a JSON scenario; all violations are reported together."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object", line=1, column=1)
    errs = _Collector()
    known = {"name", "initial_system", "transform", "experiments", "output_dir", "seed", "parameters", "description"}
    for extra in sorted(set(doc) - known):
        errs.add(extra, "unknown field")
    name = doc.get("name")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        errs.add("name", "expected a non-empty string without path separators")
    params = _parameters(doc, "scenario", errs)
    sys = dim = tr = mode = None
    if "initial_system" in doc:
        sys, dim = _system(doc["initial_system"], errs, params)
    else:
        errs.add("initial_system", "is required")
    if "transform" in doc:
        tr, mode = _transform(doc["transform"], dim, errs, params)
    else:
        errs.add("transform", "is required")
    experiments = []
    raw_exps = doc.get("experiments")
    if not isinstance(raw_exps, list) or not raw_exps:
        errs.add("experiments", "expected a non-empty list")
        raw_exps = []
    for i, e in enumerate(raw_exps):
        experiments.append(_experiment(e, i, sys, tr, dim, errs))
    out = doc.get("output_dir")
    if out is not None and not isinstance(out, str):
        errs.add("output_dir", "expected a path string")
    seed = _number(doc, "seed", "scenario", errs, default=0, integer=True)
    if errs.errors:
        raise ValidationError(errs.errors)
    return Scenario(name, sys, tr, mode, experiments, out, seed, doc)


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (``name`` without ``.json``)."""
    ref = resources.files("dktransform") / "scenarios" / f"{name}.json"
    return Path(str(ref))


def canonical_document(doc: dict) -> dict:
    """Document with defaults filled, suitable for round-trip comparison."""
    sc = parse_scenario(json.dumps(doc))
    out = {
        "name": sc.name,
        "seed": sc.seed,
        "output_dir": sc.output_dir,
        "initial_system": {
            "dim": sc.initial_system.dim,
            "metric": sc.initial_system.metric.g.to_strings(),
            "scalar_potential": sc.initial_system.scalar_potential.to_strings(),
            "vector_potential": None if sc.initial_system.vector_potential is None else sc.initial_system.vector_potential.to_strings(),
            "mass": sc.initial_system.mass,
            "hbar": sc.initial_system.hbar,
            "domain": [list(p) for p in sc.initial_system.domain],
        },
        "transform": {
            "space_map": sc.transform.space_map.to_strings(),
            "inverse_map": None if sc.transform.inverse_map is None else sc.transform.inverse_map.to_strings(),
            "time_scale": sc.transform.time_scale.to_strings(),
            "energy": sc.transform.energy,
            "conformal_exponent": sc.exponent_mode,
            "domain": [list(p) for p in sc.transform.domain],
        },
        "experiments": [_experiment_dict(e) for e in sc.experiments],
    }
    return out


def _experiment_dict(e) -> dict:
    d = asdict(e)
    d["type"] = d.pop("kind")
    for k, v in list(d.items()):
        if isinstance(v, tuple):
            d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
    return d


# -- execution ------------------------------------------------------------------------


@dataclass
class RunReport:
    passed: bool
    summary: dict
    output_dir: Path
    files: list


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _csv_text(header: list[str], rows, version: str) -> str:
    lines = [f"# {version}", ",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def _run_correspondence(sc, exp, tol, state):
    cfg = IntegratorConfig(
        rel_tol=exp.rel_tol,
        abs_tol=exp.abs_tol,
        method=exp.method,
        samples=exp.samples,
        walls=exp.walls,
        wall_margin=exp.wall_margin,
    )
    thr = exp.threshold * tol
    if sc.exponent_mode == "auto":
        chosen, reports = auto_conformal_exponent(sc.initial_system, sc.transform, exp.x0, exp.v0, exp.span, cfg, thr)
        state["exponent"] = chosen if chosen is not None else state["exponent"]
        state["exponent_selection"] = {str(c): r.deviation for c, r in reports.items()}
        rep = reports[chosen if chosen is not None else -1]
        passed = chosen is not None
    else:
        rep = correspondence_check(sc.initial_system, sc.transform.with_exponent(sc.exponent_mode), None, exp.x0, exp.v0, exp.span, cfg)
        passed = rep.passed(thr)
    s = rep.samples
    rows = []
    if s:
        d = np.abs(s["q_mapped"] - s["q_direct"]).max(axis=-1)
        rows = [[a, b, *qm, *qd, dv] for a, b, qm, qd, dv in zip(s["s"], s["t"], s["q_mapped"], s["q_direct"], d)]
    dim = sc.initial_system.dim
    header = ["s", "t"] + [f"q{i + 1}_mapped" for i in range(dim)] + [f"q{i + 1}_direct" for i in range(dim)] + ["deviation"]
    result = {
        "passed": bool(passed),
        "threshold": thr,
        "residual": rep.deviation,
        "deviation": rep.deviation,
        "velocity_residual": rep.velocity_residual,
        "clock_residual": rep.clock_residual,
        "energy_measured": rep.energy_measured,
        "energy_drift_initial": rep.energy_drift_initial,
        "pseudo_energy_drift": rep.pseudo_energy_drift,
        "samples_compared": rep.n_compared,
        "conformal_exponent": rep.conformal_exponent,
        "integrator": {"method": exp.method, "rel_tol": exp.rel_tol, "abs_tol": exp.abs_tol, "walls": exp.walls, "wall_margin": exp.wall_margin},
        "error": rep.error,
    }
    return result, _csv_text(header, rows, "dktransform-correspondence/1")


def _exponent_transform(sc, state):
    return sc.transform.with_exponent(state["exponent"])


def _run_spectra(sc, exp, tol, grid_scale, state):
    tr = _exponent_transform(sc, state)
    gi, gf = exp.grid_i.build(grid_scale), exp.grid_f.build(grid_scale)
    rep = zero_mode_spectral_check(sc.initial_system, tr, gi, gf, exp.levels)
    bare = zero_mode_spectral_check(sc.initial_system, tr, gi, gf, exp.levels, quantum_correction=False)
    thr = exp.threshold * tol
    rows = [[k + 1, e, lam, o, r, ob] for k, (e, lam, o, r, ob) in enumerate(zip(rep.levels, rep.final_eigenvalues, rep.offsets, rep.relative_offsets, bare.offsets))]
    header = ["k", "energy", "final_eigenvalue", "offset", "relative_offset", "offset_without_correction"]
    worst_bare = max(abs(o) for o in bare.offsets) / abs(rep.levels[0])
    result = {
        "passed": rep.max_relative_offset < thr,
        "threshold": thr,
        "residual": rep.max_relative_offset,
        "relative_offsets": rep.relative_offsets,
        "relative_offsets_without_correction": [abs(o) / abs(rep.levels[0]) for o in bare.offsets],
        "correction_effect_ratio": worst_bare / rep.max_relative_offset if rep.max_relative_offset > 0 else math.inf,
        "levels": rep.levels,
        "grids": {"grid_i": asdict(exp.grid_i) | {"n": gi.n}, "grid_f": asdict(exp.grid_f) | {"n": gf.n}},
    }
    return result, _csv_text(header, rows, "dktransform-spectra/1")


def _run_resolvent(sc, exp, tol, grid_scale, state):
    tr = _exponent_transform(sc, state)
    gi, gf = exp.grid_i.build(grid_scale), exp.grid_f.build(grid_scale)
    energy = exp.energy
    if energy is None:
        ground = float(discretize_hamiltonian(sc.initial_system, gi).eigenvalues(1)[0])
        energy = exp.energy_factor * ground if ground < 0 else ground - abs(exp.energy_factor)
    pairs = exp.pairs if exp.pairs is not None else default_probe_pairs((gi.x_min, gi.x_max))
    rep = resolvent_dk_check(sc.initial_system, tr, energy, pairs, gi, gf, prefactor_exponent=exp.prefactor_exponent, refine=exp.refine)
    thr = exp.threshold * tol
    conv = list(rep.grid_convergence.values())
    monotone = all(b < a for a, b in zip(conv, conv[1:]))
    rows = [[p[0], p[1], float(np.real(l)), float(np.real(r)), e] for p, l, r, e in zip(rep.pairs, rep.lhs, rep.rhs, rep.relative_errors)]
    result = {
        "passed": bool(rep.max_relative_error < thr and monotone),
        "threshold": thr,
        "residual": rep.max_relative_error,
        "energy_probe": energy,
        "prefactor_exponent": rep.prefactor_exponent,
        "grid_convergence": {str(k): v for k, v in rep.grid_convergence.items()},
        "monotone_refinement": monotone,
        "grids": {"grid_i": asdict(exp.grid_i) | {"n": gi.n}, "grid_f": asdict(exp.grid_f) | {"n": gf.n}},
    }
    return result, _csv_text(["q", "q0", "lhs", "rhs", "relative_error"], rows, "dktransform-resolvent/1")


def _run_geometry_audit(sc, exp, tol, state):
    tr = _exponent_transform(sc, state)
    init = sc.initial_system
    if init.hbar <= 0:
        init = init.with_hbar(1.0)
    pts = sample_grid(tr.domain, exp.points_per_axis)
    if exp.random_points:
        rng = np.random.default_rng(sc.seed)
        lo = np.array([a for a, _ in tr.domain])
        hi = np.array([b for _, b in tr.domain])
        pad = 0.05 * (hi - lo)
        pts = np.concatenate([pts, rng.uniform(lo + pad, hi - pad, size=(exp.random_points, tr.dim))])
    schwarz = np.array([schwarz_residual(tr.space_map, p) for p in pts])
    direct = {c: quantum_correction_direct(init, tr, c).eval(pts) for c in CONTRACTIONS}
    geo = quantum_potential_geometric(init, tr).eval(pts)
    scale = max(float(np.max(np.abs(geo))), float(np.max(np.abs(direct["metric_trace"]))))
    floor = 1e-12 * init.hbar**2 / init.mass
    rel = {c: float(np.max(np.abs(direct[c] - geo)) / scale) if scale > floor else float(np.max(np.abs(direct[c] - geo))) for c in CONTRACTIONS}
    problems = tr.validate(pts)
    thr = exp.threshold * tol
    passed = bool(np.max(schwarz) < thr and not problems and rel["metric_trace"] < thr)
    rows = [[*p, s, d, g] for p, s, d, g in zip(pts, schwarz, direct["metric_trace"], geo)]
    header = [f"Q{i + 1}" for i in range(tr.dim)] + ["schwarz_residual", "vqu_direct", "vqu_geometric"]
    result = {
        "passed": passed,
        "threshold": thr,
        "residual": max(float(np.max(schwarz)), rel["metric_trace"]),
        "schwarz_residual": float(np.max(schwarz)),
        "equivalence_relative_difference": rel,
        "contraction": "metric_trace",
        "transform_problems": problems,
        "points": int(len(pts)),
        "hbar_used": init.hbar,
    }
    return result, _csv_text(header, rows, "dktransform-geometry-audit/1")


def run_scenario(sc: Scenario, output_dir=None, tolerance_scale: float = 1.0, grid_scale: float = 1.0) -> RunReport:
    """Execute experiments in order and write CSV files plus a JSON summary.

    Files are assembled in a temporary directory and moved into place only
    after every experiment has run, so a crash never leaves partial output.
    """
    out = Path(output_dir or sc.output_dir or Path("dk_output") / sc.name)
    state = {"exponent": -1 if sc.exponent_mode == "auto" else sc.exponent_mode, "exponent_selection": None}
    results = []
    files: dict[str, str] = {}
    for i, exp in enumerate(sc.experiments):
        log.info("running experiment %d (%s)", i, exp.kind)
        try:
            if exp.kind == "correspondence":
                res, text = _run_correspondence(sc, exp, tolerance_scale, state)
            elif exp.kind == "spectra":
                res, text = _run_spectra(sc, exp, tolerance_scale, grid_scale, state)
            elif exp.kind == "resolvent":
                res, text = _run_resolvent(sc, exp, tolerance_scale, grid_scale, state)
            else:
                res, text = _run_geometry_audit(sc, exp, tolerance_scale, state)
        except DKError as exc:
            res, text = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}, None
        fname = f"{sc.name}_{i:02d}_{exp.kind}.csv"
        if text is not None:
            files[fname] = text
            res["csv"] = fname
        res = {"index": i, "type": exp.kind, **res}
        results.append(res)
    passed = all(r["passed"] for r in results)
    summary = {
        "schema": SUMMARY_VERSION,
        "tool": "dktransform",
        "version": __version__,
        "scenario": sc.name,
        "seed": sc.seed,
        "tolerance_scale": tolerance_scale,
        "grid_scale": grid_scale,
        "conventions": {
            "conformal_exponent": state["exponent"],
            "exponent_mode": sc.exponent_mode,
            "exponent_selection": state["exponent_selection"],
            "operator_ordering": "symmetric Laplace-Beltrami (half-density form)",
            "contraction": "metric_trace",
            "torsion_square": "spacetime metric diag(f^2, g)",
            "resolvent_normalization": "half-density, (f f0)^((2-D)/4) (g/g_f)^(1/4) (g0/g_f0)^(1/4)",
        },
        "experiments": results,
        "passed": passed,
    }
    files[f"{sc.name}_summary.json"] = json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n"
    files[f"{sc.name}_report.txt"] = text_report(summary)
    with tempfile.TemporaryDirectory(prefix="dk-") as tmp:
        for fname, text in files.items():
            (Path(tmp) / fname).write_text(text, encoding="utf-8")
        out.mkdir(parents=True, exist_ok=True)
        for fname in files:
            shutil.move(str(Path(tmp) / fname), str(out / fname))
    return RunReport(passed, summary, out, sorted(files))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def text_report(summary: dict) -> str:
    lines = [
        f"scenario {summary['scenario']} (dktransform {summary['version']})",
        f"conformal exponent: {summary['conventions']['conformal_exponent']:+d}"
        + (" (auto)" if summary["conventions"]["exponent_mode"] == "auto" else " (fixed)"),
    ]
    for r in summary["experiments"]:
        status = "PASS" if r["passed"] else "FAIL"
        detail = r.get("error") or f"residual {r.get('residual', float('nan')):.3e} (threshold {r.get('threshold', float('nan')):.1e})"
        lines.append(f"[{status}] {r['index']:02d} {r['type']}: {detail}")
    lines.append("overall: " + ("PASS" if summary["passed"] else "FAIL"))
    return "\n".join(lines) + "\n"
