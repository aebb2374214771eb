"""Command-line experiment runner.

Usage::

    hbrescale {simulate,compare,validate,certify} --config run.json [--out DIR] [--seed N]

A config is a single JSON document::

    {
      "seed": 0,
      "system": {
        "variant": "AVD_function",
        "problem": {"id": "quadratic", "dim": 2, "params": {}},
        "alpha": 4.0,
        "start_time": 1.0,
        "horizon": 50.0,
        "y0": [1.0, -0.5],
        "y1": [0.0, 0.0]
      },
      "integrator": {"rtol": 1e-9, "atol": 1e-12},
      "outputs": {"directory": "out", "samples": 100},
      "diagnostics": {"certify": [{"series": "f_gap", "exponent": 2, "window_start": 10}]},
      "compare": {"n_samples": 200}
    }

Heavy Ball variants take ``lambda`` and scalings ``b`` or ``mu``/``gamma``
given as ``{"family": ..., <params>}``. Exit codes: 0 success, 2 invalid
config (nothing written), 3 integration failure, 4 compare-mode initial data
inconsistent with the time map.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import diagnostics as diag
from .dynamics import (
    Scaling,
    SpecError,
    SystemSpec,
    Variant,
    validate_assumption_function,
    validate_assumption_operator,
    velocities,
)
from .integrator import IntegrationError, IntegratorControls, TimeRangeError, resample, simulate
from .problems import ProblemError, build_operator_problem, build_scalar_problem
from .rescaling import TimeMap, equivalence_check, heavy_twin, map_initial_conditions

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_MAPPING = 4

COMMANDS = ("simulate", "compare", "validate", "certify")
MAPPING_TOLERANCE = 1e-12

_TOP_KEYS = {"command", "seed", "system", "integrator", "outputs", "diagnostics", "compare"}
_SYSTEM_KEYS = {"variant", "problem", "lambda", "alpha", "b", "mu", "gamma", "start_time", "horizon", "y0", "y1"}
_PROBLEM_KEYS = {"id", "dim", "params"}
_INTEGRATOR_KEYS = {"method", "rtol", "atol", "h_init", "h_max", "h", "max_steps"}
_OUTPUT_KEYS = {"directory", "samples", "grid"}
_DIAGNOSTIC_KEYS = {"certify", "reports", "eta", "epsilon", "twin_lambda"}
_CERTIFY_KEYS = {"series", "exponent", "window_start", "weight", "edges", "slack", "clock"}
_COMPARE_KEYS = {"heavy", "n_samples", "twin_lambda", "map_alpha_offset"}
_REPORTS = ("monotonicity", "stabilization", "discriminant")
_WEIGHTS = ("b", "integral_b", "mu")


class ConfigError(ValueError):
    """Schema violation in an experiment config."""


# ---------------------------------------------------------------- formatting

def _fmt(x: float) -> str:
    """Shortest round-trip decimal form (at most 17 significant digits)."""
    x = float(x)
    if math.isfinite(x):
        return repr(x)
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars/arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else _fmt(x)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_plain(payload), indent=2, allow_nan=False) + "\n")


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- config parsing

def _section(cfg: dict, key: str, allowed: set, required: bool = False) -> dict:
    value = cfg.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing required section {key!r}")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {key!r} must be an object")
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
    return value


def _number(section: dict, key: str, default=None, where: str = "") -> Optional[float]:
    value = section.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where}{key} must be a finite number, got {value!r}")
    return float(value)


def _vector(section: dict, key: str, dim: int, default=None) -> np.ndarray:
    value = section.get(key, default)
    if value is None:
        raise ConfigError(f"system.{key} is required")
    try:
        arr = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"system.{key} must be a list of numbers") from None
    if arr.shape != (dim,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"system.{key} must hold {dim} finite numbers")
    return arr


def _variant(system: dict) -> Variant:
    try:
        return Variant(system.get("variant"))
    except ValueError:
        names = [v.value for v in Variant]
        raise ConfigError(f"system.variant must be one of {names}, got {system.get('variant')!r}") from None


def _scaling(system: dict, key: str, t0: float) -> Optional[Scaling]:
    cfg = system.get(key)
    if cfg is None:
        return None
    if not isinstance(cfg, dict):
        raise ConfigError(f"system.{key} must be an object with a 'family' key")
    return Scaling.from_config(cfg, t0)


def _problem(system: dict, variant: Variant, seed: int):
    cfg = _section(system, "problem", _PROBLEM_KEYS, required=True)
    dim = cfg.get("dim", 2)
    if isinstance(dim, bool) or not isinstance(dim, int):
        raise ConfigError("system.problem.dim must be an integer")
    params = cfg.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("system.problem.params must be an object")
    builder = build_operator_problem if variant.is_operator else build_scalar_problem
    return builder(cfg.get("id"), dim, params, seed)


def _scalings(system: dict, variant: Variant, t0: float):
    b = mu = gamma = None
    lam = _number(system, "lambda", where="system.")
    if variant is Variant.HBF_function:
        b = _scaling(system, "b", t0)
    elif variant is Variant.HB_operator:
        mu = _scaling(system, "mu", t0)
        gamma = _scaling(system, "gamma", t0) or mu
        if lam is None and mu is not None and mu.family == "special_operator_case":
            alpha = mu.params["alpha"]
            lam = 2 * (alpha - 1) / alpha
    return lam, b, mu, gamma


def build_system(system: dict, seed: int, horizon_required: bool = True) -> tuple[SystemSpec, float]:
    """``SystemSpec`` and horizon from the ``system`` section of a config."""
    variant = _variant(system)
    t0 = _number(system, "start_time", 0.0 if variant.is_heavy_ball else 1.0, "system.")
    horizon = _number(system, "horizon", where="system.")
    if horizon is None and horizon_required:
        raise ConfigError("system.horizon is required")
    if horizon is not None and not horizon > t0:
        raise ConfigError("system.horizon must exceed system.start_time")
    problem = _problem(system, variant, seed)
    lam, b, mu, gamma = _scalings(system, variant, t0)
    y0 = _vector(system, "y0", problem.dim)
    y1 = _vector(system, "y1", problem.dim, np.zeros(problem.dim))
    spec = SystemSpec(variant, problem, t0, y0, y1, lam=lam, alpha=_number(system, "alpha", where="system."),
                      b=b, mu=mu, gamma=gamma)
    return spec, horizon


def _controls(cfg: dict) -> IntegratorControls:
    section = _section(cfg, "integrator", _INTEGRATOR_KEYS)
    kwargs = {k: section[k] for k in ("method", "rtol", "atol", "h_init", "h_max", "h") if k in section}
    if "max_steps" in section:
        kwargs["max_steps"] = section["max_steps"]
    try:
        return IntegratorControls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from None


@dataclass
class CertifyRequest:
    series: str
    exponent: float
    window_start: float
    weight: Optional[str] = None
    edges: Optional[list] = None
    slack: float = diag.RATE_SLACK
    clock: str = "native"


@dataclass
class Experiment:
    command: str
    seed: int
    out_dir: Path
    spec: Optional[SystemSpec] = None
    horizon: Optional[float] = None
    controls: IntegratorControls = field(default_factory=IntegratorControls)
    samples: int = 100
    grid: str = "linear"
    certify: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    eta: Optional[float] = None
    epsilon: Optional[float] = None
    twin_lambda: Optional[float] = None
    heavy_cfg: Optional[dict] = None
    n_samples: int = 200
    map_alpha_offset: float = 0.0
    validate_inputs: Optional[tuple] = None
    raw: dict = field(default_factory=dict)


def _certify_requests(section: dict) -> list:
    requests = section.get("certify", [])
    if not isinstance(requests, list):
        raise ConfigError("diagnostics.certify must be a list")
    out = []
    for i, req in enumerate(requests):
        if not isinstance(req, dict):
            raise ConfigError(f"diagnostics.certify[{i}] must be an object")
        unknown = set(req) - _CERTIFY_KEYS
        if unknown:
            raise ConfigError(f"unknown keys in diagnostics.certify[{i}]: {sorted(unknown)}")
        where = f"diagnostics.certify[{i}]."
        weight = req.get("weight")
        if weight is not None and weight not in _WEIGHTS:
            raise ConfigError(f"{where}weight must be one of {_WEIGHTS}")
        edges = req.get("edges")
        if edges is not None and (not isinstance(edges, list) or len(edges) < 3):
            raise ConfigError(f"{where}edges must be a list of at least three times")
        clock = req.get("clock", "native")
        if clock not in ("native", "rescaled"):
            raise ConfigError(f"{where}clock must be 'native' or 'rescaled'")
        exponent = _number(req, "exponent", where=where)
        window = _number(req, "window_start", where=where)
        if not isinstance(req.get("series"), str) or exponent is None or (window is None and edges is None):
            raise ConfigError(f"{where} needs series, exponent and window_start (or edges)")
        out.append(CertifyRequest(req["series"], exponent, window if window is not None else float(edges[0]),
                                  weight, [float(e) for e in edges] if edges else None,
                                  _number(req, "slack", diag.RATE_SLACK, where), clock))
    return out


def parse_config(cfg: Any, command: str, seed: Optional[int] = None, out: Optional[str] = None) -> Experiment:
    """Validate a decoded config and build everything a run needs.

    Raises
    ------
    ConfigError
        On any schema violation or invalid parameter; nothing has been
        written at that point.
    """
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}")
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if cfg.get("command", command) != command:
        raise ConfigError(f"config is for {cfg['command']!r} but {command!r} was requested")
    if seed is None:
        seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    outputs = _section(cfg, "outputs", _OUTPUT_KEYS)
    out_dir = Path(out if out is not None else outputs.get("directory", "out"))
    samples = outputs.get("samples", 100)
    if isinstance(samples, bool) or not isinstance(samples, int) or samples < 2:
        raise ConfigError("outputs.samples must be an integer >= 2")
    grid = outputs.get("grid", "linear")
    if grid not in ("linear", "log"):
        raise ConfigError("outputs.grid must be 'linear' or 'log'")
    diagnostics = _section(cfg, "diagnostics", _DIAGNOSTIC_KEYS)
    reports = diagnostics.get("reports", [])
    if not isinstance(reports, list) or any(r not in _REPORTS for r in reports):
        raise ConfigError(f"diagnostics.reports must be a list drawn from {_REPORTS}")
    system = _section(cfg, "system", _SYSTEM_KEYS, required=True)
    exp = Experiment(command, seed, out_dir, samples=samples, grid=grid, reports=list(reports), raw=cfg,
                     certify=_certify_requests(diagnostics),
                     eta=_number(diagnostics, "eta", where="diagnostics."),
                     epsilon=_number(diagnostics, "epsilon", where="diagnostics."),
                     twin_lambda=_number(diagnostics, "twin_lambda", where="diagnostics."),
                     controls=_controls(cfg))
    try:
        if command == "validate":
            exp.validate_inputs = _validate_inputs(system)
            return exp
        exp.spec, exp.horizon = build_system(system, seed)
        if command == "compare":
            if exp.spec.variant.is_heavy_ball:
                raise ConfigError("compare expects the vanishing-damping system under 'system'")
            compare = _section(cfg, "compare", _COMPARE_KEYS)
            exp.heavy_cfg = compare.get("heavy")
            if exp.heavy_cfg is not None and not isinstance(exp.heavy_cfg, dict):
                raise ConfigError("compare.heavy must be an object")
            n = compare.get("n_samples", 200)
            if isinstance(n, bool) or not isinstance(n, int) or n < 2:
                raise ConfigError("compare.n_samples must be an integer >= 2")
            exp.n_samples = n
            exp.map_alpha_offset = _number(compare, "map_alpha_offset", 0.0, "compare.")
            twin_lambda = _number(compare, "twin_lambda", where="compare.")
            if twin_lambda is not None:
                exp.twin_lambda = twin_lambda
            # fail early on a malformed explicit twin
            if exp.heavy_cfg is not None:
                _explicit_heavy(exp)
        elif exp.spec.variant.is_heavy_ball and exp.twin_lambda is not None:
            raise ConfigError("diagnostics.twin_lambda only applies to vanishing-damping variants")
        for req in exp.certify:
            _check_series_name(req.series, exp.spec.variant)
            _check_weight(req.weight, exp.spec)
            if req.clock == "rescaled":
                _rescaled_clock(exp.spec)
        if "discriminant" in exp.reports and exp.spec.variant is not Variant.HB_operator:
            raise ConfigError("the discriminant report needs an HB_operator system")
    except (SpecError, ProblemError) as exc:
        raise ConfigError(str(exc)) from None
    return exp


def _validate_inputs(system: dict):
    variant = _variant(system)
    if not variant.is_heavy_ball:
        raise ConfigError("validate expects a Heavy Ball variant (HBF_function or HB_operator)")
    t0 = _number(system, "start_time", 0.0, "system.")
    horizon = _number(system, "horizon", t0 + 100.0, "system.")
    if not horizon > t0:
        raise ConfigError("system.horizon must exceed system.start_time")
    lam, b, mu, gamma = _scalings(system, variant, t0)
    if lam is None or not lam > 0:
        raise ConfigError("system.lambda must be a positive number")
    if variant is Variant.HBF_function and b is None:
        raise ConfigError("system.b is required for HBF_function")
    if variant is Variant.HB_operator and mu is None:
        raise ConfigError("system.mu is required for HB_operator")
    return variant, lam, b, mu, gamma, horizon


def _check_series_name(name: str, variant: Variant) -> None:
    names = ["velocity_norm", "energy", "W_or_total"]
    names += ["operator_norm", "inner_product"] if variant.is_operator else ["f_gap"]
    if name not in names:
        raise ConfigError(f"series {name!r} is not available for {variant.value}; choose from {names}")


def _check_weight(name: Optional[str], spec: SystemSpec) -> None:
    if name is None:
        return
    needed = Variant.HB_operator if name == "mu" else Variant.HBF_function
    if spec.variant is not needed:
        raise ConfigError(f"weight {name!r} needs an {needed.value} system")
    if name == "integral_b" and (spec.b.value_fn is not None or (spec.b.rate and spec.b.power)):
        raise ConfigError("integral_b weight needs an exponential, polynomial or constant scaling")


def _rescaled_clock(spec: SystemSpec) -> TimeMap:
    """Time map of a Heavy Ball run built on one of the two special scaling families."""
    if spec.variant is Variant.HBF_function and spec.b.family == "special_function_case":
        p = spec.b.params
        return TimeMap.function_case(p["alpha"], p["lambda"], p["s0"], p["t0"])
    if spec.variant is Variant.HB_operator and spec.mu.family == "special_operator_case":
        p = spec.mu.params
        return TimeMap.operator_case(p["alpha"], p["s0"], p["t0"])
    raise ConfigError("clock 'rescaled' needs a Heavy Ball system with a special_function_case b "
                      "or special_operator_case mu")


def _explicit_heavy(exp: Experiment) -> tuple[SystemSpec, TimeMap]:
    heavy_sys = dict(exp.heavy_cfg)
    heavy_sys.setdefault("problem", exp.raw["system"]["problem"])
    heavy_sys.pop("horizon", None)
    unknown = set(heavy_sys) - _SYSTEM_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in compare.heavy: {sorted(unknown)}")
    heavy, _ = build_system(heavy_sys, exp.seed, horizon_required=False)
    vanishing = exp.spec
    expected = Variant.HBF_function if vanishing.variant is Variant.AVD_function else Variant.HB_operator
    if heavy.variant is not expected:
        raise ConfigError(f"compare.heavy must be {expected.value} for {vanishing.variant.value}")
    if expected is Variant.HBF_function:
        tmap = TimeMap.function_case(vanishing.alpha, heavy.lam, vanishing.start_time, heavy.start_time)
    else:
        tmap = TimeMap.operator_case(vanishing.alpha, vanishing.start_time, heavy.start_time)
    return heavy, tmap


# ---------------------------------------------------------------- runs

def _sample_times(exp: Experiment, t_start: float, t_end: float) -> np.ndarray:
    if exp.grid == "log" and t_start > 0:
        times = np.geomspace(t_start, t_end, exp.samples)
    else:
        times = np.linspace(t_start, t_end, exp.samples)
    times[0], times[-1] = t_start, t_end
    return times


def _energy_pair(traj, exp: Experiment):
    spec = traj.spec
    anchor = spec.anchor
    if spec.variant is Variant.HBF_function:
        params = diag.EnergyParams(exp.eta, anchor) if exp.eta is not None else None
        return diag.energy_function_case(traj, params), diag.lyapunov_W(traj)
    if spec.variant is Variant.HB_operator:
        params = diag.EnergyParams(spec.lam - exp.epsilon, anchor) if exp.epsilon is not None else None
        total, _ = diag.energy_operator_case(traj, params)
        return total, total
    return diag.rescaled_energy(traj, exp.twin_lambda)


def _series(traj, exp: Experiment) -> dict:
    named = diag.residual_series(traj)
    named["energy"], named["W_or_total"] = _energy_pair(traj, exp)
    return named


def _residual_key(spec: SystemSpec) -> str:
    return "operator_norm" if spec.variant.is_operator else "f_gap"


def _integral_b(b: Scaling, t0: float, t: np.ndarray) -> np.ndarray:
    """``int_{(t+t0)/2}^t b(r) dr`` for the closed-form families."""
    lo = 0.5 * (t + t0)
    if b.rate:
        coef = math.exp(b.log_coefficient())
        return coef / b.rate * (np.exp(b.rate * t) - np.exp(b.rate * lo))
    p = b.power + 1.0
    return b.kappa / p * (t ** p - lo ** p)


def _weight(name: Optional[str], spec: SystemSpec, t: np.ndarray):
    if name is None:
        return None
    if name == "mu":
        return spec.mu.value(t)
    return spec.b.value(t) if name == "b" else _integral_b(spec.b, spec.start_time, t)


def _certificates(exp: Experiment, named: dict, spec: SystemSpec) -> list:
    out = []
    for req in exp.certify:
        series = named[req.series]
        weight = _weight(req.weight, spec, series.times)
        if req.clock == "rescaled":
            series = diag.Series(_rescaled_clock(spec).sigma(series.times), series.values, series.name)
        entry = {"series": req.series, "window_start": req.window_start, "weight": req.weight,
                 "clock": req.clock}
        try:
            cert = diag.certify_rate(series, req.exponent, req.window_start, weight=weight,
                                     edges=req.edges, slack=req.slack)
            entry.update(cert.to_dict())
        except ValueError as exc:
            entry.update({"exponent": req.exponent, "pass": False, "verdict": "insufficient_data",
                          "error": str(exc)})
        out.append(entry)
    return out


def _assumption(spec: SystemSpec, horizon: float, twin_lambda: Optional[float]) -> dict:
    if spec.variant is Variant.HBF_function:
        return validate_assumption_function(spec.lam, spec.b, horizon).to_dict()
    if spec.variant is Variant.HB_operator:
        return validate_assumption_operator(spec.lam, spec.mu, spec.gamma, horizon).to_dict()
    twin, tmap = heavy_twin(spec, twin_lambda)
    report = _assumption(twin, tmap.tau(horizon), None)
    report["heavy_twin"] = True
    return report


def _extra_reports(exp: Experiment, traj, named: dict) -> dict:
    out = {}
    spec = traj.spec
    if "monotonicity" in exp.reports:
        energy = named["energy"]
        entry = {"energy_max_relative_increment": energy.max_relative_increment(),
                 "W_or_total_max_relative_increment": named["W_or_total"].max_relative_increment()}
        if spec.variant is Variant.HB_operator:
            burn_in = diag.detect_burn_in(traj)
            entry["burn_in"] = burn_in
            entry["energy_max_relative_increment_after_burn_in"] = energy.after(burn_in).max_relative_increment()
        out["monotonicity"] = entry
    if "stabilization" in exp.reports:
        tail = diag.tail_stabilization(traj)
        out["stabilization"] = {"checkpoints": tail.times, "values": tail.values,
                                "diameter": diag.trajectory_diameter(traj)}
    if "discriminant" in exp.reports:
        eps = exp.epsilon if exp.epsilon is not None else diag.default_epsilon(
            spec.lam, spec.mu, spec.gamma, traj.t_end)
        deltas, inside = [], True
        for t in traj.times:
            d = diag.parabola_discriminant(float(t), spec.lam, spec.mu, spec.gamma)
            deltas.append(d.delta)
            inside = inside and d.roots is not None and d.roots[0] < eps < d.roots[1]
        out["discriminant"] = {"epsilon": eps, "min_delta": min(deltas), "epsilon_inside_roots": inside}
    return out


def run_simulate(exp: Experiment, write_csv: bool = True) -> int:
    spec = exp.spec
    try:
        traj = simulate(spec, exp.horizon, exp.controls)
    except IntegrationError as exc:
        return _integration_failure(exp, exc)
    named = _series(traj, exp)
    report = {
        "command": exp.command,
        "variant": spec.variant.value,
        "problem": spec.problem.name,
        "dim": spec.dim,
        "seed": exp.seed,
        "integration": {"n_nodes": len(traj), "n_rejected": traj.n_rejected, "n_evals": traj.n_evals,
                        "t_start": traj.t_start, "t_end": traj.t_end},
        "final": {"time": traj.t_end, "residual": named[_residual_key(spec)].values[-1],
                  "energy": named["energy"].values[-1], "W_or_total": named["W_or_total"].values[-1]},
        "assumption": _assumption(spec, exp.horizon, exp.twin_lambda),
        "certificates": _certificates(exp, named, spec),
    }
    report.update(_extra_reports(exp, traj, named))
    rows = _trajectory_rows(exp, traj) if write_csv else None
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    if rows is not None:
        _write_csv(exp.out_dir / "trajectory.csv", trajectory_header(spec.dim), rows)
    _write_json(exp.out_dir / "report.json", report)
    return EXIT_OK


def trajectory_header(dim: int) -> list[str]:
    """CSV header; depends only on the dimension."""
    cols = ["t"]
    for prefix in ("p", "u", "v"):
        cols += [f"{prefix}_{i}" for i in range(dim)]
    return cols + ["residual", "energy", "W_or_total"]


def _trajectory_rows(exp: Experiment, traj) -> np.ndarray:
    spec = traj.spec
    sampled = resample(traj, _sample_times(exp, traj.t_start, traj.t_end))
    named = _series(sampled, exp)
    d = spec.dim
    vel = velocities(spec, sampled.times, sampled.states)
    return np.column_stack([sampled.times, sampled.states[:, :d], sampled.states[:, d:], vel,
                            named[_residual_key(spec)].values, named["energy"].values,
                            named["W_or_total"].values])


def _integration_failure(exp: Experiment, exc: IntegrationError) -> int:
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(exp.out_dir / "report.json", {
        "command": exp.command,
        "variant": exp.spec.variant.value,
        "error": "integration_failure",
        "message": str(exc),
        "last_good_time": exc.last_time,
    })
    return EXIT_INTEGRATION


def _mapping_mismatch(heavy: SystemSpec, vanishing: SystemSpec, tmap: TimeMap) -> float:
    y0, y1 = map_initial_conditions(tmap, "to_heavy", vanishing.y0, vanishing.y1)
    scale = max(1.0, float(np.abs(y0).max()), float(np.abs(y1).max()))
    return max(float(np.abs(heavy.y0 - y0).max()), float(np.abs(heavy.y1 - y1).max())) / scale


def run_compare(exp: Experiment) -> int:
    vanishing = exp.spec
    if exp.heavy_cfg is None:
        heavy, tmap = heavy_twin(vanishing, exp.twin_lambda)
        mode = "auto_twin"
    else:
        heavy, tmap = _explicit_heavy(exp)
        mode = "explicit"
        mismatch = _mapping_mismatch(heavy, vanishing, tmap)
        if mismatch > MAPPING_TOLERANCE:
            exp.out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(exp.out_dir / "report.json", {
                "command": "compare", "error": "mapping_mismatch", "relative_mismatch": mismatch,
                "tolerance": MAPPING_TOLERANCE})
            return EXIT_MAPPING
    heavy_horizon = tmap.tau(exp.horizon)
    try:
        traj_v = simulate(vanishing, exp.horizon, exp.controls)
        traj_h = simulate(heavy, heavy_horizon, exp.controls)
    except IntegrationError as exc:
        return _integration_failure(exp, exc)

    check_map = tmap
    if exp.map_alpha_offset:
        alpha = tmap.alpha + exp.map_alpha_offset
        check_map = (TimeMap.function_case(alpha, tmap.lam, tmap.s0, tmap.t0) if tmap.case == "function_case"
                     else TimeMap.operator_case(alpha, tmap.s0, tmap.t0))
    try:
        eq = equivalence_check(traj_h, traj_v, check_map, exp.n_samples)
    except TimeRangeError as exc:
        return _integration_failure(exp, IntegrationError(str(exc), traj_h))

    report = {
        "command": "compare",
        "mode": mode,
        "vanishing_variant": vanishing.variant.value,
        "heavy_variant": heavy.variant.value,
        "problem": vanishing.problem.name,
        "seed": exp.seed,
        "time_map": {"case": check_map.case, "alpha": check_map.alpha, "lambda": check_map.lam,
                     "s0": check_map.s0, "t0": check_map.t0},
        "heavy_horizon": heavy_horizon,
        "equivalence": eq.to_dict(),
        "integration": {"vanishing_nodes": len(traj_v), "heavy_nodes": len(traj_h)},
    }
    t = np.asarray(check_map.tau(eq.sample_times), dtype=float)
    rows = np.column_stack([eq.sample_times, t, eq.deviations, eq.velocity_deviations])
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(exp.out_dir / "equivalence.csv", ["s", "t", "deviation", "velocity_deviation"], rows)
    _write_json(exp.out_dir / "report.json", report)
    return EXIT_OK


def run_validate(exp: Experiment) -> int:
    variant, lam, b, mu, gamma, horizon = exp.validate_inputs
    if variant is Variant.HBF_function:
        report = validate_assumption_function(lam, b, horizon)
    else:
        report = validate_assumption_operator(lam, mu, gamma, horizon)
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(exp.out_dir / "report.json", {"command": "validate", "variant": variant.value,
                                              "horizon": horizon, **report.to_dict()})
    return EXIT_OK


def run(exp: Experiment) -> int:
    if exp.command == "compare":
        return run_compare(exp)
    if exp.command == "validate":
        return run_validate(exp)
    return run_simulate(exp, write_csv=exp.command == "simulate")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbrescale", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides outputs.directory)")
    parser.add_argument("--seed", type=int, default=None, help="seed for random problem data (overrides config)")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
        exp = parse_config(cfg, args.command, args.seed, args.out)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(exp)


if __name__ == "__main__":
    sys.exit(main())
