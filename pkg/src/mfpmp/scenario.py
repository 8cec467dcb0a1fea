"""JSON scenario files: strict parsing into a :class:`Problem` plus run settings.

Every problem found in a file is reported, not just the first. The
schema is documented in ``scenarios/README.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .controls import ControlError, ControlSignal, make_basis
from .dynamics import NonlocalField, make_drift, make_kernel
from .functionals import POTENTIALS, CostError, make_running, make_terminal
from .measures import EmpiricalMeasure, MeasureError, uniform_measure
from .problem import Problem


class ScenarioError(ValueError):
    """Raised with the full list of problems found in a scenario."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


TOP_KEYS = {"dim", "initial", "reference", "T", "dt", "dynamics", "control",
            "terminal", "running", "seed", "tolerances", "optimizer", "needle", "ot"}
REQUIRED = ("dim", "initial", "T", "terminal")
TOLERANCE_DEFAULTS = {
    "maximization": 1e-4,      # relative to 1 + |H|
    "stationarity": 1e-3,      # relative to 1 + |H|
    "first_order": 1e-4,       # absolute
    "k_constancy": 1e-3,       # relative to 1 + |K(T)|
    "hamiltonian": 1e-5,       # relative to 1 + |H(0)|
    "terminal": 0.0,
}
MEASURE_KEYS = {
    "points": {"points", "weights"},
    "gaussian": {"sampler", "n", "mean", "std"},
    "uniform_ball": {"sampler", "n", "center", "radius"},
}
KERNEL_KEYS = {"zero": set(), "linear_attraction": {"a"},
               "gaussian": {"sigma", "amplitude"}}
DRIFT_KEYS = {"zero": set(), "constant": {"c"}, "linear": {"B", "c"}}
TERMINAL_KEYS = {"variance": set(), "target_attraction": {"target"},
                 "potential": {"potential", "center", "width", "power"}}
RUNNING_KEYS = {"control_energy": {"lam"}, "tracking": {"lam", "beta", "target"}}
CONTROL_KEYS = {"basis", "c1_bound", "n_intervals", "time_grid", "params",
                "centers", "width"}
OPTIMIZER_KEYS = {"max_iters", "tol"}
NEEDLE_KEYS = {"n_omega", "n_tau", "scale"}
OT_KEYS = {"p"}


@dataclass
class Scenario:
    dim: int
    problem: Problem
    control: ControlSignal
    seed: int = 0
    reference: Optional[EmpiricalMeasure] = None
    optimizer: dict = field(default_factory=dict)
    needle: dict = field(default_factory=dict)
    ot: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def tolerances(self) -> dict:
        return self.problem.tolerances

    def with_control(self, u: ControlSignal) -> "Scenario":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("control", {})["params"] = u.params.tolist()
        return replace(self, control=u, raw=raw)


def load_scenario(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc.strerror}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"malformed JSON at line {exc.lineno}: {exc.msg}"]) from None
    if not isinstance(data, dict):
        raise ScenarioError(["top level must be a JSON object"])
    return data


def parse_scenario(path, dt: Optional[float] = None,
                   seed: Optional[int] = None) -> Scenario:
    """Read and validate a scenario file; ``dt``/``seed`` override the file."""
    data = load_scenario(path)
    if dt is not None:
        data["dt"] = dt
    if seed is not None:
        data["seed"] = seed
    return build_scenario(data)


def build_scenario(data: dict) -> Scenario:
    try:
        return _build(data)
    except (MeasureError, ControlError, CostError) as exc:
        raise ScenarioError([str(exc)]) from None


def _build(data: dict) -> Scenario:
    errs: List[str] = []
    _unknown(data, TOP_KEYS, "", errs)
    for key in REQUIRED:
        if key not in data:
            errs.append(f"missing required field '{key}'")

    dim = data.get("dim")
    if "dim" in data and not (isinstance(dim, int) and not isinstance(dim, bool) and dim >= 1):
        errs.append(f"dim must be a positive integer, got {dim!r}")
        dim = None
    seed = data.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0):
        errs.append(f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0
    T = _positive(data, "T", None, errs)
    dt = _positive(data, "dt", 1e-3, errs)
    rng = np.random.default_rng(seed)

    mu0 = _measure(data.get("initial"), dim, "initial", rng, errs) if "initial" in data else None
    reference = None
    if "reference" in data:
        reference = _measure(data["reference"], dim, "reference", rng, errs)

    field_ = _field(data.get("dynamics", {}), dim, errs)
    terminal = _cost(data.get("terminal"), TERMINAL_KEYS, "terminal",
                     lambda s: make_terminal(s, dim), errs) if "terminal" in data else None
    running = None
    if data.get("running") is not None:
        running = _cost(data["running"], RUNNING_KEYS, "running",
                        lambda s: make_running(s, dim), errs)

    tolerances = dict(TOLERANCE_DEFAULTS)
    tol_in = data.get("tolerances", {})
    if _is_obj(tol_in, "tolerances", errs):
        _unknown(tol_in, set(TOLERANCE_DEFAULTS), "tolerances.", errs)
        for k, v in tol_in.items():
            if k in TOLERANCE_DEFAULTS:
                if _is_num(v) and v >= 0:
                    tolerances[k] = float(v)
                else:
                    errs.append(f"tolerances.{k} must be a nonnegative number")

    control = _control(data.get("control", {}), dim, T, dt, errs)
    optimizer = _section(data, "optimizer", OPTIMIZER_KEYS, errs)
    needle = _section(data, "needle", NEEDLE_KEYS, errs)
    ot = _section(data, "ot", OT_KEYS, errs)
    if ot.get("p", 1) not in (1, 2):
        errs.append(f"ot.p must be 1 or 2, got {ot.get('p')!r}")

    if errs:
        raise ScenarioError(errs)
    c1 = control.c1_bound
    problem = Problem(field_, mu0, T, terminal, running, dt=dt, c1_bound=c1,
                      tolerances=tolerances)
    return Scenario(dim, problem, control, seed, reference, optimizer, needle, ot,
                    raw=json.loads(json.dumps(data)))


# -- helpers -----------------------------------------------------------------

def _unknown(obj, allowed, prefix, errs):
    for k in obj:
        if k not in allowed:
            errs.append(f"unknown field '{prefix}{k}'; allowed: {', '.join(sorted(allowed))}")


def _is_obj(v, name, errs):
    if not isinstance(v, dict):
        errs.append(f"{name} must be an object")
        return False
    return True


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _positive(data, key, default, errs):
    v = data.get(key, default)
    if v is None:
        return None
    if not (_is_num(v) and v > 0):
        errs.append(f"{key} must be a positive number, got {v!r}")
        return None
    return float(v)


def _section(data, name, keys, errs):
    sec = data.get(name, {})
    if not _is_obj(sec, name, errs):
        return {}
    _unknown(sec, keys, name + ".", errs)
    return {k: v for k, v in sec.items() if k in keys}


def _vector(v, dim, name, errs, default=None):
    if v is None:
        v = default
    a = np.atleast_1d(np.asarray(v, dtype=float)) if _numeric_array(v) else None
    if a is None or a.ndim != 1 or a.shape[0] not in (1, dim or a.shape[0]):
        errs.append(f"{name} must be a number or a length-{dim} list")
        return None
    if a.shape[0] == 1 and dim:
        a = np.full(dim, a[0])
    return a


def _numeric_array(v):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        return False
    return a.size > 0 and bool(np.all(np.isfinite(a)))


def _measure(spec, dim, name, rng, errs):
    if not _is_obj(spec, name, errs):
        return None
    kind = spec.get("sampler", "points")
    if kind not in MEASURE_KEYS:
        errs.append(f"{name}.sampler {kind!r} unknown; available: gaussian, uniform_ball")
        return None
    before = len(errs)
    _unknown(spec, MEASURE_KEYS[kind], name + ".", errs)
    if kind == "points":
        pts = spec.get("points")
        if not _numeric_array(pts) or np.asarray(pts, float).ndim != 2:
            errs.append(f"{name}.points must be a nonempty list of coordinate lists")
            return None
        pts = np.asarray(pts, dtype=float)
        if dim and pts.shape[1] != dim:
            errs.append(f"{name}.points have dimension {pts.shape[1]}, expected {dim}")
            return None
        w = spec.get("weights")
        if w is not None:
            if not _numeric_array(w) or np.asarray(w, float).shape != (pts.shape[0],) \
                    or np.any(np.asarray(w, float) < 0) or np.sum(w) <= 0:
                errs.append(f"{name}.weights must be {pts.shape[0]} nonnegative numbers "
                            "with positive sum")
                return None
        if len(errs) > before:
            return None
        return EmpiricalMeasure(pts, w) if w is not None else uniform_measure(pts)
    n = spec.get("n")
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
        errs.append(f"{name}.n must be a positive integer")
        return None
    if not dim:
        return None
    if kind == "gaussian":
        m = _vector(spec.get("mean"), dim, f"{name}.mean", errs, 0.0)
        s = _vector(spec.get("std"), dim, f"{name}.std", errs, 1.0)
        if m is None or s is None:
            return None
        if np.any(s < 0):
            errs.append(f"{name}.std must be nonnegative")
            return None
        pts = m + s * rng.standard_normal((n, dim))
    else:
        c = _vector(spec.get("center"), dim, f"{name}.center", errs, 0.0)
        r = spec.get("radius", 1.0)
        if c is None:
            return None
        if not (_is_num(r) and r > 0):
            errs.append(f"{name}.radius must be positive")
            return None
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        pts = c + r * g * rng.random((n, 1)) ** (1.0 / dim)
    if len(errs) > before:
        return None
    return uniform_measure(pts)


def _family(spec, table, name, errs):
    """Validate ``{"family": ..., params}`` against ``table``; returns params."""
    if not _is_obj(spec, name, errs):
        return None, None
    fam = spec.get("family")
    if fam not in table:
        errs.append(f"{name}.family {fam!r} unknown; available: {', '.join(table)}")
        return None, None
    before = len(errs)
    _unknown(spec, table[fam] | {"family"}, name + ".", errs)
    if len(errs) > before:
        return None, None
    return fam, {k: v for k, v in spec.items() if k != "family"}


def _field(spec, dim, errs):
    if not _is_obj(spec, "dynamics", errs):
        return None
    _unknown(spec, {"kernel", "drift"}, "dynamics.", errs)
    kernel = drift = None
    fam, params = _family(spec.get("kernel", {"family": "zero"}), KERNEL_KEYS,
                          "dynamics.kernel", errs)
    if fam is not None:
        try:
            kernel = make_kernel(fam, **params)
        except (TypeError, ValueError) as exc:
            errs.append(f"dynamics.kernel: {exc}")
    fam, params = _family(spec.get("drift", {"family": "zero"}), DRIFT_KEYS,
                          "dynamics.drift", errs)
    if fam is not None:
        try:
            drift = make_drift(fam, **params)
            if dim and fam != "zero" and _drift_dim(drift) not in (None, dim):
                errs.append(f"dynamics.drift has dimension {_drift_dim(drift)}, expected {dim}")
        except (TypeError, ValueError) as exc:
            errs.append(f"dynamics.drift: {exc}")
    if kernel is None or drift is None:
        return None
    return NonlocalField(kernel, drift)


def _drift_dim(drift):
    for attr in ("B", "c"):
        a = getattr(drift, attr, None)
        if a is not None:
            return np.shape(a)[0]
    return None


def _cost(spec, table, name, build, errs):
    fam, _ = _family(spec, table, name, errs)
    if fam is None:
        return None
    if name == "terminal" and fam == "potential" and \
            spec.get("potential", "quadratic") not in POTENTIALS:
        errs.append(f"terminal.potential {spec['potential']!r} unknown; "
                    f"available: {', '.join(POTENTIALS)}")
        return None
    try:
        return build(spec)
    except (CostError, TypeError, ValueError) as exc:
        errs.append(f"{name}: {exc}")
        return None


def _control(spec, dim, T, dt, errs):
    if not _is_obj(spec, "control", errs):
        return None
    _unknown(spec, CONTROL_KEYS, "control.", errs)
    c1 = spec.get("c1_bound", math.inf)
    if not (_is_num(c1) and c1 > 0) and c1 != math.inf:
        errs.append("control.c1_bound must be a positive number")
        return None
    name = spec.get("basis", "affine")
    if not dim:
        return None
    try:
        extra = {}
        if name == "rbf":
            extra = {"centers": spec.get("centers"), "width": spec.get("width")}
            if extra["centers"] is None or extra["width"] is None:
                errs.append("control.basis 'rbf' needs 'centers' and 'width'")
                return None
        basis = make_basis(name, dim, **extra)
    except (ControlError, TypeError, ValueError) as exc:
        errs.append(f"control.basis: {exc}")
        return None
    if T is None:
        return None
    if "time_grid" in spec and "n_intervals" in spec:
        errs.append("control: give either 'time_grid' or 'n_intervals', not both")
        return None
    if "time_grid" in spec:
        grid = spec["time_grid"]
        if not _numeric_array(grid):
            errs.append("control.time_grid must be a list of numbers")
            return None
        grid = np.asarray(grid, dtype=float)
        if abs(grid[-1] - T) > 1e-12 * max(T, 1.0):
            errs.append(f"control.time_grid must end at T={T}")
    else:
        K = spec.get("n_intervals", 1)
        if not (isinstance(K, int) and not isinstance(K, bool) and K >= 1):
            errs.append("control.n_intervals must be a positive integer")
            return None
        grid = np.linspace(0.0, T, K + 1)
    if dt is not None:
        for a, b in zip(grid[:-1], grid[1:]):
            q = (b - a) / dt
            if abs(q - round(q)) > 1e-6 or round(q) < 1:
                errs.append(f"dt={dt} does not divide control interval [{a:g}, {b:g}]")
    K = grid.shape[0] - 1
    params = spec.get("params")
    if params is None:
        params = np.zeros((K, basis.n_params))
    else:
        if not _numeric_array(params):
            errs.append("control.params must be numeric")
            return None
        params = np.asarray(params, dtype=float)
        if params.ndim == 1:
            params = np.tile(params, (K, 1))
        if params.shape != (K, basis.n_params):
            errs.append(f"control.params must have shape ({K}, {basis.n_params}) "
                        f"or ({basis.n_params},), got {params.shape}")
            return None
    try:
        return ControlSignal.from_params(basis, params, grid, c1)
    except ControlError as exc:
        errs.append(f"control: {exc}")
        return None
