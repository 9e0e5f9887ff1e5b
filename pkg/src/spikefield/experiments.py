"""Experiment specifications and the protocols behind each CLI command.

Every command turns a validated :class:`ExperimentSpec` into an
:class:`ExperimentResult`: either CSV rows with a fixed column order, or a
JSON document.  Randomness for grid point ``g`` and replica ``r`` comes from
``RngStream(seed).split(g).split(r)``, so results do not depend on the
worker count or on completion order.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import jsonschema
import numpy as np

from . import __version__
from . import constant_rate as cr
from . import stationary as st
from .discrete import averaged_activity, run_discrete
from .exact import (
    EXTINCT,
    HORIZON_EXCEEDED,
    NEVER_EXTINGUISHES,
    extinction_time,
    run_exact,
    run_thinning,
)
from .mckean import compare_with_particles, picard_iterate
from .model import (
    MEAN_FIELD,
    RAW,
    Affine,
    Constant,
    ConstantWeight,
    Dirac,
    DomainError,
    Explicit,
    NetworkConfig,
    Power,
    RateFunction,
    RngStream,
    UniformAround,
    UniformInterval,
    UniformWeight,
)

EXPERIMENTS = (
    "phase-affine",
    "extinction-scaling",
    "bistability-quadratic",
    "fixed-points",
    "constant-rate-check",
    "mckean-compare",
    "simulate",
)

SUSTAINED = "sustained"
TRIVIAL_CLASS = "trivial"


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class NumericalFailure(RuntimeError):
    """A solver did not reach its tolerance (exit code 3)."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# ---------------------------------------------------------------------------
# specification

_RATE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "constant"}, "rate0": {"type": "number", "minimum": 0}},
         "required": ["kind", "rate0"], "additionalProperties": False},
        {"properties": {"kind": {"const": "affine"}, "slope": {"type": "number", "minimum": 0},
                        "intercept": {"type": "number", "minimum": 0}},
         "required": ["kind", "slope"], "additionalProperties": False},
        {"properties": {"kind": {"const": "power"}, "coef": {"type": "number", "exclusiveMinimum": 0},
                        "exponent": {"type": "number", "exclusiveMinimum": 0},
                        "intercept": {"type": "number", "minimum": 0}},
         "required": ["kind", "coef", "exponent"], "additionalProperties": False},
    ],
}

_INIT_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"properties": {"kind": {"const": "dirac"}, "x": {"type": "number", "minimum": 0}},
         "required": ["kind", "x"], "additionalProperties": False},
        {"properties": {"kind": {"const": "uniform_interval"}, "lo": {"type": "number"},
                        "hi": {"type": "number"}},
         "required": ["kind", "lo", "hi"], "additionalProperties": False},
        {"properties": {"kind": {"const": "uniform_around"}, "center": {"type": "number"},
                        "std": {"type": "number", "minimum": 0}},
         "required": ["kind", "center"], "additionalProperties": False},
        {"properties": {"kind": {"const": "explicit"},
                        "values": {"type": "array", "items": {"type": "number", "minimum": 0}}},
         "required": ["kind", "values"], "additionalProperties": False},
    ],
}

_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ExperimentSpec",
    "type": "object",
    "required": ["experiment"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "rate": _RATE_SCHEMA,
        "rates": {"type": "array", "items": _RATE_SCHEMA},
        "weight_law": {"enum": ["constant", "uniform"],
                       "description": "weights with mean E(V): constant E(V) or uniform on [0, 2E(V)]"},
        "mean_weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "v0": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "xi": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "replicas": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "n": {"type": "integer", "minimum": 1},
        "scaling": {"enum": [RAW, MEAN_FIELD]},
        "init": _INIT_SCHEMA,
        "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1},
        "horizon": _POS,
        "window": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0},
                   "minItems": 2, "maxItems": 2},
        "threshold": {"type": "number"},
        "rho_factor": _POS,
        "bisection_steps": {"type": "integer", "minimum": 0},
        "beta_range": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
        "grid_points": {"type": "integer", "minimum": 64},
        "root_tol": _POS,
        "extinction_horizon": _POS,
        "samples": {"type": "integer", "minimum": 1},
        "grid_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.05},
        "particles": {"type": "integer", "minimum": 1000},
        "tol": {"type": "number", "minimum": 0},
        "max_iter": {"type": "integer", "minimum": 1},
        "method": {"enum": ["exact", "thinning", "discrete"]},
        "sample_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}


@dataclass
class ExperimentSpec:
    experiment: str
    rate: dict = field(default_factory=lambda: {"kind": "affine", "slope": 1.0, "intercept": 0.0})
    rates: list = field(default_factory=list)
    weight_law: str = "constant"
    mean_weights: list = field(default_factory=list)
    sizes: list = field(default_factory=list)
    v0: list = field(default_factory=list)
    xi: list = field(default_factory=list)
    replicas: int = 10
    seed: int = 0
    n: int = 500
    scaling: str = MEAN_FIELD
    init: dict = field(default_factory=lambda: {"kind": "uniform_interval", "lo": 0.0, "hi": 1.0})
    dt: float = 0.01
    horizon: float = 100.0
    window: Optional[list] = None
    threshold: float = 0.05
    rho_factor: float = 2.0
    bisection_steps: int = 4
    beta_range: list = field(default_factory=lambda: [1e-4, 1e2])
    grid_points: int = 512
    root_tol: float = 1e-10
    extinction_horizon: float = 1e4
    samples: int = 100000
    grid_step: float = 0.01
    particles: int = 5000
    tol: float = 1e-3
    max_iter: int = 30
    method: str = "exact"
    sample_times: list = field(default_factory=list)

    def resolved_window(self):
        return list(self.window) if self.window is not None else [max(0.0, self.horizon - 10.0), self.horizon]

    def to_json(self) -> str:
        """Canonical one-line form embedded in output headers."""
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True)


def _line_of(text: str, key: str) -> int:
    needle = f'"{key}"'
    for k, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return k
    return 1


def parse_spec(text: str) -> ExperimentSpec:
    """Parse JSON text (or a CSV whose header echoes a spec) into a spec."""
    if text.startswith("#"):
        for line in text.splitlines():
            if line.startswith("# spec: "):
                text = line[len("# spec: "):]
                break
        else:
            raise ConfigError("line 1: output header carries no '# spec:' line")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        key = next((p for p in exc.absolute_path if isinstance(p, str)), None)
        if key is None and exc.validator == "additionalProperties":
            extra = set(raw) - set(SCHEMA["properties"])
            key = sorted(extra)[0] if extra else None
        line = _line_of(text, key) if key else 1
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"line {line}: {where}: {exc.message}") from None
    spec = ExperimentSpec(**raw)
    check_spec(spec, text)
    return spec


def check_spec(spec: ExperimentSpec, text: str = "") -> None:
    """Cross-field checks that the schema cannot express."""
    def fail(key, msg):
        raise ConfigError(f"line {_line_of(text, key) if text else 1}: {key}: {msg}")

    exp = spec.experiment
    if exp not in EXPERIMENTS:
        fail("experiment", f"unknown experiment {exp!r}")
    needs_weights = {"phase-affine", "extinction-scaling", "mckean-compare", "simulate"}
    if exp in needs_weights and not spec.mean_weights:
        fail("mean_weights", "grid must not be empty")
    if exp == "extinction-scaling" and not spec.sizes:
        fail("sizes", "grid must not be empty")
    if exp == "constant-rate-check" and not (spec.sizes and spec.rates):
        fail("sizes", "constant-rate-check needs non-empty sizes and rates")
    if exp == "fixed-points" and not (spec.rates and spec.mean_weights):
        fail("rates", "fixed-points needs non-empty rates and mean_weights")
    try:
        rate = build_rate(spec.rate)
        for r in spec.rates:
            build_rate(r)
        build_init(spec.init)
    except DomainError as exc:
        fail("rate", str(exc))
    if exp == "phase-affine" and not isinstance(rate, Affine):
        fail("rate", "phase-affine needs an affine rate")
    if exp == "extinction-scaling" and rate.b0 > 0:
        fail("rate", "extinction needs b(0) = 0")
    if exp == "bistability-quadratic" and not (isinstance(rate, Power) and rate.exponent > 1):
        fail("rate", "bistability needs a power rate with exponent > 1")
    if exp == "constant-rate-check":
        for r in spec.rates:
            if r["kind"] != "constant" or not r["rate0"] > 0:
                fail("rates", "constant-rate-check needs positive constant rates")
    if exp == "mckean-compare" and spec.scaling != MEAN_FIELD:
        fail("scaling", "mckean-compare needs mean_field scaling")
    lo, hi = spec.beta_range
    if not lo < hi:
        fail("beta_range", "lower end must be below upper end")
    t_a, t_b = spec.resolved_window()
    if not 0 <= t_a <= t_b <= spec.horizon:
        fail("window", "averaging window must lie inside [0, horizon]")


def apply_overrides(spec: ExperimentSpec, seed=None, replicas=None) -> ExperimentSpec:
    spec = copy.deepcopy(spec)
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("line 1: seed: must be an unsigned 64-bit integer")
        spec.seed = seed
    if replicas is not None:
        if replicas < 1:
            raise ConfigError("line 1: replicas: must be >= 1")
        spec.replicas = replicas
    return spec


# ---------------------------------------------------------------------------
# builders

def build_rate(d: dict) -> RateFunction:
    kind = d["kind"]
    if kind == "constant":
        return Constant(float(d["rate0"]))
    if kind == "affine":
        return Affine(float(d["slope"]), float(d.get("intercept", 0.0)))
    if kind == "power":
        return Power(float(d["coef"]), float(d["exponent"]), float(d.get("intercept", 0.0)))
    raise DomainError(f"unknown rate kind {kind!r}")


def build_init(d: dict):
    kind = d["kind"]
    if kind == "dirac":
        return Dirac(float(d["x"]))
    if kind == "uniform_interval":
        return UniformInterval(float(d["lo"]), float(d["hi"]))
    if kind == "uniform_around":
        return UniformAround(float(d["center"]), float(d.get("std", 0.2)))
    if kind == "explicit":
        return Explicit(tuple(float(v) for v in d["values"]))
    raise DomainError(f"unknown initial condition {kind!r}")


def build_weights(law: str, mean: float):
    return ConstantWeight(mean) if law == "constant" else UniformWeight(0.0, 2.0 * mean)


def rate_to_dict(b: RateFunction) -> dict:
    coef, expo, floor = b.params()
    if isinstance(b, Constant):
        return {"kind": "constant", "rate0": floor}
    if isinstance(b, Affine):
        return {"kind": "affine", "slope": coef, "intercept": floor}
    return {"kind": "power", "coef": coef, "exponent": expo, "intercept": floor}


def stream_for(spec: ExperimentSpec, grid_index: int, replica: int) -> RngStream:
    return RngStream(spec.seed).split(grid_index).split(replica)


# ---------------------------------------------------------------------------
# results and parallel dispatch

@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = True

    @property
    def is_table(self) -> bool:
        return bool(self.columns)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def render_csv(result: ExperimentResult) -> str:
    lines = [f"# spikefield {__version__}", f"# spec: {result.spec.to_json()}",
             ",".join(result.columns)]
    for row in result.rows:
        lines.append(",".join(_fmt(row[c]) for c in result.columns))
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return _fmt(v)
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render_json(result: ExperimentResult) -> str:
    doc = {"version": __version__, "spec": json.loads(result.spec.to_json()),
           "passed": _jsonable(result.passed), "results": _jsonable(result.summary)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _call(job):
    fn, args = job
    return fn(*args)


def run_jobs(fn: Callable, args_list: list, threads: int = 1) -> list:
    """Map ``fn`` over argument tuples, preserving order."""
    if threads <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, [(fn, a) for a in args_list]))


def resolve_threads(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("SPIKEFIELD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"line 1: SPIKEFIELD_THREADS: not an integer: {env!r}") from None
    return 1


# ---------------------------------------------------------------------------
# phase-affine

def _beta_star(b: RateFunction, mean_weight: float, spec: ExperimentSpec) -> float:
    roots = [s for s in st.find_stationary(b, mean_weight, tuple(spec.beta_range),
                                           spec.grid_points, spec.root_tol)
             if s.kind == st.NONTRIVIAL]
    return roots[-1].beta if roots else 0.0


def _activity_replica(spec_json: str, grid_index: int, replica: int, mean_weight: float,
                      init_dict: dict) -> float:
    spec = ExperimentSpec(**json.loads(spec_json))
    cfg = NetworkConfig(spec.n, build_rate(spec.rate), build_weights(spec.weight_law, mean_weight),
                        spec.scaling, spec.seed)
    out = run_discrete(cfg, build_init(init_dict), spec.dt, spec.horizon,
                       stream_for(spec, grid_index, replica), histogram=False)
    return averaged_activity(out, spec.resolved_window())


def cmd_phase_affine(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    b = build_rate(spec.rate)
    jobs = [(spec.to_json(), g, r, ev, spec.init)
            for g, ev in enumerate(spec.mean_weights) for r in range(spec.replicas)]
    hats = run_jobs(_activity_replica, jobs, threads)
    stars = [_beta_star(b, ev, spec) for ev in spec.mean_weights]
    cols = ["experiment", "grid_index", "mean_weight", "replica", "beta_hat", "beta_star",
            "window_lo", "window_hi"]
    t_a, t_b = spec.resolved_window()
    rows = [dict(experiment=spec.experiment, grid_index=g, mean_weight=ev, replica=r,
                 beta_hat=h, beta_star=stars[g], window_lo=t_a, window_hi=t_b)
            for (_, g, r, ev, _), h in zip(jobs, hats)]
    summary = {"window": [t_a, t_b], "window_note": "default window is [max(0, T-10), T]",
               "points": [{"mean_weight": ev, "beta_star": stars[g],
                           "mean_beta_hat": float(np.mean(hats[g * spec.replicas:(g + 1) * spec.replicas]))}
                          for g, ev in enumerate(spec.mean_weights)]}
    return ExperimentResult(spec, cols, rows, summary)


# ---------------------------------------------------------------------------
# extinction-scaling

def _extinction_replica(spec_json: str, grid_index: int, replica: int, n: int,
                        mean_weight: float):
    spec = ExperimentSpec(**json.loads(spec_json))
    cfg = NetworkConfig(n, build_rate(spec.rate), build_weights(spec.weight_law, mean_weight),
                        spec.scaling, spec.seed)
    rep = extinction_time(cfg, build_init(spec.init), spec.extinction_horizon,
                          stream_for(spec, grid_index, replica))
    return rep.outcome, rep.last_spike_time, rep.total_spikes


def censored_quantile(times, q: float) -> float:
    """Empirical quantile with right-censored runs counted as +inf.

    A value of +inf means the quantile exceeds the censoring horizon.
    """
    arr = np.sort(np.asarray(times, dtype=float))
    pos = q * (arr.size - 1)
    lo, hi = math.floor(pos), math.ceil(pos)
    if math.isinf(arr[hi]):
        return math.inf
    return float(arr[lo] + (arr[hi] - arr[lo]) * (pos - lo))


def cmd_extinction_scaling(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    grid = [(n, ev) for n in spec.sizes for ev in spec.mean_weights]
    jobs = [(spec.to_json(), g, r, n, ev) for g, (n, ev) in enumerate(grid)
            for r in range(spec.replicas)]
    outs = run_jobs(_extinction_replica, jobs, threads)
    cols = ["experiment", "grid_index", "n", "mean_weight", "replica", "outcome",
            "extinction_time", "total_spikes"]
    rows, points = [], []
    for (_, g, r, n, ev), (outcome, t_ext, spikes) in zip(jobs, outs):
        rows.append(dict(experiment=spec.experiment, grid_index=g, n=n, mean_weight=ev,
                         replica=r, outcome=outcome,
                         extinction_time=t_ext if outcome == EXTINCT else math.inf,
                         total_spikes=spikes))
    for g, (n, ev) in enumerate(grid):
        sub = [row for row in rows if row["grid_index"] == g]
        times = [row["extinction_time"] for row in sub]
        point = {"n": n, "mean_weight": ev, "replicas": len(sub),
                 "extinct": sum(row["outcome"] == EXTINCT for row in sub),
                 "horizon_exceeded": sum(row["outcome"] == HORIZON_EXCEEDED for row in sub),
                 "never_extinguishes": sum(row["outcome"] == NEVER_EXTINGUISHES for row in sub),
                 "median": censored_quantile(times, 0.5),
                 "censoring_horizon": spec.extinction_horizon}
        if len(sub) > 1:
            point["q1"] = censored_quantile(times, 0.25)
            point["q3"] = censored_quantile(times, 0.75)
        points.append(point)
    return ExperimentResult(spec, cols, rows, {"points": points})


# ---------------------------------------------------------------------------
# bistability-quadratic

def _classify(beta_hat: float, threshold: float) -> str:
    return SUSTAINED if beta_hat > threshold else TRIVIAL_CLASS


def bistability_setup(spec: ExperimentSpec):
    """Resolve the E(V) grid and the diagram for the configured power rate."""
    b = build_rate(spec.rate)
    a = b.exponent
    diagram = st.superlinear_critical(a)
    if spec.mean_weights:
        weights = list(spec.mean_weights)
    else:
        weights = [(spec.rho_factor * diagram.rho_c / b.coef) ** (1.0 / a)]
    return b, diagram, weights


def default_v0_grid(beta_minus, beta_plus, mean_weight, points=10):
    return list(np.geomspace(0.2 * beta_minus * mean_weight, 2.0 * beta_plus * mean_weight, points))


def _bistable_replica(spec_json: str, grid_index: int, replica: int, mean_weight: float,
                      v0: float) -> float:
    init = {"kind": "uniform_around", "center": v0, "std": 0.2}
    return _activity_replica(spec_json, grid_index, replica, mean_weight, init)


def cmd_bistability_quadratic(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    b, diagram, weights = bistability_setup(spec)
    cols = ["experiment", "grid_index", "mean_weight", "v0", "replica", "beta_hat", "class",
            "stage"]
    rows, points = [], []
    g_next = 0
    for ev in weights:
        rho = b.coef * ev**b.exponent
        branches = st.superlinear_branches(b.exponent, ev, rho, diagram=diagram)
        point = {"mean_weight": ev, "rho": rho, "rho_c": diagram.rho_c, "beta_c": diagram.beta_c,
                 "beta_minus": branches.beta_minus if branches else None,
                 "beta_plus": branches.beta_plus if branches else None}
        if spec.v0:
            v0s = sorted(spec.v0)
        elif branches:
            v0s = default_v0_grid(branches.beta_minus, branches.beta_plus, ev)
        else:
            v0s = default_v0_grid(diagram.beta_c, diagram.beta_c, ev)

        def probe(v0, stage):
            nonlocal g_next
            g = g_next
            g_next += 1
            jobs = [(spec.to_json(), g, r, ev, v0) for r in range(spec.replicas)]
            hats = run_jobs(_bistable_replica, jobs, threads)
            classes = [_classify(h, spec.threshold) for h in hats]
            for r, (h, c) in enumerate(zip(hats, classes)):
                rows.append(dict(experiment=spec.experiment, grid_index=g, mean_weight=ev, v0=v0,
                                 replica=r, beta_hat=h, **{"class": c}, stage=stage))
            return classes

        scan = {v0: probe(v0, "scan") for v0 in v0s}
        all_trivial = [v for v, c in scan.items() if all(x == TRIVIAL_CLASS for x in c)]
        all_sust = [v for v, c in scan.items() if all(x == SUSTAINED for x in c)]
        point["scan"] = [{"v0": v, "sustained": sum(x == SUSTAINED for x in c)}
                         for v, c in scan.items()]
        sep = None
        mixed_points = [v for v, c in scan.items() if 0 < sum(x == SUSTAINED for x in c) < len(c)]
        if all_trivial and all_sust:
            lo = max(all_trivial)
            above = [v for v in all_sust if v > lo]
            if above:
                hi = min(above)
                mixed = any(lo < v < hi for v in scan)
                for _ in range(0 if mixed else spec.bisection_steps):
                    mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
                    cls = probe(mid, "bisection")
                    if all(x == TRIVIAL_CLASS for x in cls):
                        lo = mid
                    elif all(x == SUSTAINED for x in cls):
                        hi = mid
                    else:
                        mixed_points.append(mid)
                        break
                sep = [lo, hi]
        point["separatrix"] = sep
        point["mixed_v0"] = sorted(mixed_points)
        points.append(point)
    summary = {"threshold": spec.threshold,
               "threshold_note": "sustained when mean rate over the window exceeds threshold",
               "window": spec.resolved_window(), "points": points}
    return ExperimentResult(spec, cols, rows, summary)


# ---------------------------------------------------------------------------
# fixed-points

def fixed_point_entry(b: RateFunction, mean_weight: float, spec: ExperimentSpec) -> dict:
    sols = st.find_stationary(b, mean_weight, tuple(spec.beta_range), spec.grid_points,
                              spec.root_tol)
    slope = b.slope_at_zero()
    entry = {"rate": rate_to_dict(b), "mean_weight": mean_weight, "slope_at_zero": slope,
             "rho": 0.0 if mean_weight == 0 else slope * mean_weight,
             "trivial_stability": st.classify_trivial_stability(b, mean_weight),
             "roots": [{"beta": s.beta, "alpha": s.alpha, "c": s.c, "kind": s.kind,
                        "stability": s.stability} for s in sols if s.kind == st.NONTRIVIAL]}
    if isinstance(b, Power) and b.exponent > 1 and b.b0 == 0:
        diagram = st.superlinear_critical(b.exponent)
        entry["rho"] = b.coef * mean_weight**b.exponent
        entry["rho_c"] = diagram.rho_c
        entry["beta_c"] = diagram.beta_c
    return entry


def cmd_fixed_points(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    entries = [fixed_point_entry(build_rate(r), ev, spec)
               for r in spec.rates for ev in spec.mean_weights]
    return ExperimentResult(spec, summary={"entries": entries})


# ---------------------------------------------------------------------------
# constant-rate-check

def _z(measured, expected, stderr):
    if stderr == 0:
        return 0.0 if measured == expected else math.inf
    return (measured - expected) / stderr


def cmd_constant_rate_check(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    xis = sorted(spec.xi) if spec.xi else [0.0, 0.5, 1.0, 2.0]
    mean_w = spec.mean_weights[0] if spec.mean_weights else 0.5
    weights = build_weights(spec.weight_law, mean_w)
    rows = []
    g = 0
    for n in spec.sizes:
        for rd in spec.rates:
            lam = float(rd["rate0"])
            kick = 1.0 if spec.scaling == RAW else 1.0 / n
            x = cr.backward_coupling_samples(n, lam, weights, stream_for(spec, g, 0),
                                             spec.samples, kick)[:, 0]
            g += 1
            se = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else 0.0
            mean_f = cr.equilibrium_mean(n, lam, kick * weights.mean)
            atom = float(np.mean(x == 0))
            atom_f = cr.atom_at_zero(n)
            atom_se = math.sqrt(atom_f * (1 - atom_f) / x.size)
            lap = []
            for xi in xis:
                e = np.exp(-xi * x)
                lap_se = e.std(ddof=1) / math.sqrt(e.size) if e.size > 1 else 0.0
                f = cr.laplace_transform(n, lam, weights, xi, scale=kick)
                lap.append({"xi": xi, "formula": f, "monte_carlo": float(e.mean()),
                            "z": _z(float(e.mean()), f, lap_se)})
            rows.append({"n": n, "rate": lam, "mean_formula": mean_f,
                         "mean_monte_carlo": float(x.mean()), "mean_z": _z(float(x.mean()), mean_f, se),
                         "atom_formula": atom_f, "atom_monte_carlo": atom,
                         "atom_z": _z(atom, atom_f, atom_se), "laplace": lap})
    zs = [abs(r["mean_z"]) for r in rows] + [abs(r["atom_z"]) for r in rows] + \
         [abs(p["z"]) for r in rows for p in r["laplace"]]
    res = ExperimentResult(spec, summary={"weights": {"law": spec.weight_law, "mean": mean_w},
                                          "samples": spec.samples, "rows": rows,
                                          "max_abs_z": max(zs)})
    res.passed = bool(max(zs) < 3)
    return res


# ---------------------------------------------------------------------------
# mckean-compare

def cmd_mckean_compare(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    b = build_rate(spec.rate)
    ev = spec.mean_weights[0]
    init = build_init(spec.init)
    rng = RngStream(spec.seed)
    report = picard_iterate(b, ev, init, spec.grid_step, spec.horizon, spec.particles, None,
                            spec.tol, spec.max_iter, rng.split(0))
    cfg = NetworkConfig(spec.particles, b, build_weights(spec.weight_law, ev), MEAN_FIELD, spec.seed)
    run = run_discrete(cfg, init, spec.dt, spec.horizon, rng.split(1), histogram=False)
    dist = compare_with_particles(report.trajectory, run)
    coef = b.params()[0]
    target = b.b0 if coef == 0 else _beta_star(b, ev, spec)
    gate = 0.1 * target if target > 0 else 1e-9
    gaps_ok = bool(report.gaps) and report.gaps[-1] < spec.tol
    passed = bool(gaps_ok and dist < gate)
    summary = {"picard": {"iterations": report.iterations, "converged": report.converged,
                          "gaps": report.gaps, "cutoff": report.cutoff,
                          "particles": report.particles,
                          "terminal_rate": float(report.trajectory.values[-1])},
               "stationary_rate": target, "distance": dist, "distance_gate": gate,
               "gap_gate": spec.tol, "passed": passed}
    return ExperimentResult(spec, summary=summary, passed=passed)


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    b = build_rate(spec.rate)
    ev = spec.mean_weights[0]
    cfg = NetworkConfig(spec.n, b, build_weights(spec.weight_law, ev), spec.scaling, spec.seed)
    init = build_init(spec.init)
    rng = RngStream(spec.seed)
    if spec.method == "discrete":
        out = run_discrete(cfg, init, spec.dt, spec.horizon, rng, histogram=False)
        cols = ["time", "mean_potential", "mean_rate", "spikes"]
        rows = [dict(time=t, mean_potential=m, mean_rate=r, spikes=int(s))
                for t, m, r, s in zip(out.times, out.mean_potential, out.mean_rate, out.spikes)]
        return ExperimentResult(spec, cols, rows)
    if spec.method == "thinning":
        log = run_thinning(cfg, init, spec.horizon, rng)
    else:
        log, _ = run_exact(cfg, init, spec.horizon, spec.sample_times, rng)
    cols = ["time", "neuron"]
    rows = [dict(time=t, neuron=int(i)) for t, i in zip(log.times, log.ids)]
    return ExperimentResult(spec, cols, rows)


COMMANDS = {
    "phase-affine": cmd_phase_affine,
    "extinction-scaling": cmd_extinction_scaling,
    "bistability-quadratic": cmd_bistability_quadratic,
    "fixed-points": cmd_fixed_points,
    "constant-rate-check": cmd_constant_rate_check,
    "mckean-compare": cmd_mckean_compare,
    "simulate": cmd_simulate,
}


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    return COMMANDS[spec.experiment](spec, threads)


def render(result: ExperimentResult) -> str:
    return render_csv(result) if result.is_table else render_json(result)

