"""Energies, residuals and rate certificates evaluated along trajectories.

All velocity-dependent quantities go through
:func:`hbrescale.dynamics.recover_velocity`, so the auxiliary variable ``u``
of each first-order reformulation never leaks into the formulas here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .dynamics import (
    Scaling,
    SpecError,
    Variant,
    validate_assumption_function,
    validate_assumption_operator,
    velocities,
)
from .integrator import Trajectory, dense_eval
from .rescaling import heavy_twin

RATE_SLACK = 0.05
STRICT_DECAY = 0.9
BURN_IN_TOLERANCE = 0.01


@dataclass(frozen=True)
class Series:
    """A real-valued quantity sampled at strictly increasing times."""

    times: np.ndarray
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("series times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.times.size)

    def after(self, t: float) -> "Series":
        keep = self.times >= t
        return Series(self.times[keep], self.values[keep], self.name)

    def max_relative_increment(self) -> float:
        """Largest ``(v[k+1] - v[k]) / (1 + |v[k]|)``; nonpositive for a nonincreasing series."""
        if self.times.size < 2:
            return -math.inf
        v = self.values
        return float(np.max(np.diff(v) / (1.0 + np.abs(v[:-1]))))

    def is_nonincreasing(self, tol: float) -> bool:
        return self.max_relative_increment() <= tol


@dataclass(frozen=True)
class EnergyParams:
    eta: float
    anchor: np.ndarray

    def epsilon(self, lam: float) -> float:
        return lam - self.eta


@dataclass(frozen=True)
class RateCertificate:
    exponent: float
    decade_maxima: list
    passed: bool
    slack: float
    verdict: str
    nonincreasing: bool
    strict_decay: bool

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "decade_maxima": [[a, m] for a, m in self.decade_maxima],
            "pass": self.passed,
            "verdict": self.verdict,
            "nonincreasing": self.nonincreasing,
            "strict_decay": self.strict_decay,
            "slack": self.slack,
        }


def _require_variant(traj: Trajectory, *variants: Variant) -> None:
    if traj.spec is None or traj.spec.variant not in variants:
        names = ", ".join(v.value for v in variants)
        raise SpecError(f"trajectory must come from one of: {names}")


def _require_anchor(anchor) -> np.ndarray:
    if anchor is None:
        raise SpecError("problem has no known minimizer/zero to anchor the energy")
    return np.asarray(anchor, dtype=float)


# ---------------------------------------------------------------- function case

def default_eta(lam: float, b: Scaling, horizon: float) -> float:
    """Midpoint of ``(sup b'/b, lam)``."""
    sup_ratio = validate_assumption_function(lam, b, horizon).quantities["sup_bdot_over_b"]
    return 0.5 * (max(sup_ratio, 0.0) + lam)


def _function_energy(gaps, b_vals, lam, eta, dist, vel):
    shifted = eta * dist + vel
    return (b_vals * gaps
            + 0.5 * np.einsum("ij,ij->i", shifted, shifted)
            + 0.5 * eta * (lam - eta) * np.einsum("ij,ij->i", dist, dist))


def energy_function_case(traj: Trajectory, params: Optional[EnergyParams] = None) -> Series:
    """``E_eta = b (f - inf f) + |eta (y - x*) + y'|^2/2 + eta (lam - eta) |y - x*|^2 / 2`` at every node."""
    _require_variant(traj, Variant.HBF_function)
    spec = traj.spec
    if params is None:
        params = EnergyParams(default_eta(spec.lam, spec.b, traj.t_end), _require_anchor(spec.anchor))
    if not 0.0 <= params.eta <= spec.lam:
        raise ValueError("eta must lie in [0, lambda]")
    anchor = _require_anchor(params.anchor)
    p = traj.positions
    vel = velocities(spec, traj.times, traj.states)
    gaps = np.array([spec.problem.gap(y) for y in p])
    values = _function_energy(gaps, spec.b.value(traj.times), spec.lam, params.eta, p - anchor, vel)
    return Series(traj.times, values, "energy")


def lyapunov_W(traj: Trajectory) -> Series:
    """``W = (f - inf f) + |y'|^2 / (2 b)`` at every node."""
    _require_variant(traj, Variant.HBF_function)
    spec = traj.spec
    vel = velocities(spec, traj.times, traj.states)
    gaps = np.array([spec.problem.gap(y) for y in traj.positions])
    values = gaps + np.einsum("ij,ij->i", vel, vel) / (2.0 * spec.b.value(traj.times))
    return Series(traj.times, values, "W")


# ---------------------------------------------------------------- operator case

def limit_ratio(lam: float, mu: Scaling, gamma: Scaling, horizon: float) -> float:
    return validate_assumption_operator(lam, mu, gamma, horizon).quantities["L"]


def default_epsilon(lam: float, mu: Scaling, gamma: Scaling, horizon: float) -> float:
    """Center ``(lam - L)/2`` of the admissible epsilon interval."""
    return 0.5 * (lam - limit_ratio(lam, mu, gamma, horizon))


def _operator_components(V, mu_vals, lam, eta, dist, vel):
    w = 2 * eta * dist + 2 * vel + mu_vals[:, None] * V
    e1 = 0.5 * np.einsum("ij,ij->i", w, w)
    e2 = 2 * eta * (lam - eta) * np.einsum("ij,ij->i", dist, dist)
    e3 = 2 * eta * mu_vals * np.einsum("ij,ij->i", dist, V)
    e4 = 0.5 * mu_vals ** 2 * np.einsum("ij,ij->i", V, V)
    return e1, e2, e3, e4


def energy_operator_case(traj: Trajectory, params: Optional[EnergyParams] = None):
    """Total operator energy and its four components.

    Returns
    -------
    total : Series
    components : tuple of Series
        ``E1 = |2 eta (y - x*) + 2 y' + mu V(y)|^2 / 2``,
        ``E2 = 2 eta (lam - eta) |y - x*|^2``,
        ``E3 = 2 eta mu <y - x*, V(y)>`` and ``E4 = mu^2 |V(y)|^2 / 2``.
    """
    _require_variant(traj, Variant.HB_operator)
    spec = traj.spec
    if params is None:
        eps = default_epsilon(spec.lam, spec.mu, spec.gamma, traj.t_end)
        params = EnergyParams(spec.lam - eps, _require_anchor(spec.anchor))
    anchor = _require_anchor(params.anchor)
    p = traj.positions
    V = np.array([spec.problem.apply(y) for y in p])
    vel = velocities(spec, traj.times, traj.states)
    parts = _operator_components(V, spec.mu.value(traj.times), spec.lam, params.eta, p - anchor, vel)
    components = tuple(Series(traj.times, e, f"E{k + 1}") for k, e in enumerate(parts))
    return Series(traj.times, sum(parts), "energy"), components


class Discriminant(NamedTuple):
    delta: float
    roots: Optional[tuple]


def parabola_discriminant(t: float, lam: float, mu: Scaling, gamma: Scaling) -> Discriminant:
    """Reduced discriminant of the epsilon-parabola at time ``t`` and its roots when positive."""
    m = mu.value(t)
    r = gamma.value(t) / m
    g = mu.derivative(t) / m
    delta = 4.0 * ((lam - r) ** 2 - (lam - 2 * r + g) ** 2)
    if delta > 0:
        half = 0.5 * (lam - r)
        root = 0.25 * math.sqrt(delta)
        return Discriminant(delta, (half - root, half + root))
    return Discriminant(delta, None)


class FormSign(NamedTuple):
    tag: str
    degenerate: bool = False


def quadratic_form_sign(A: float, B: float, C: float) -> FormSign:
    """Sign of ``A|x|^2 + 2B<x, y> + C|y|^2`` over all vector pairs."""
    if A == 0:
        return FormSign("indefinite", True)
    if B * B - A * C <= 0:
        return FormSign("nonpositive_form" if A < 0 else "nonnegative_form")
    return FormSign("indefinite")


def operator_form_coefficients(t: float, lam: float, eps: float, mu: Scaling, gamma: Scaling):
    """``(A, B, C)`` of the quadratic form bounding the operator-energy derivative."""
    m, g, md = mu.value(t), gamma.value(t), mu.derivative(t)
    A = -3.0 * eps
    B = (-2.0 * eps * m + lam * m - 2.0 * g) + md
    C = 4.0 / 3.0 * m * (md - g)
    return A, B, C


def detect_burn_in(traj: Trajectory, tol: float = BURN_IN_TOLERANCE) -> float:
    """First node time after which ``gamma/mu`` and ``mu'/mu`` stay within ``tol`` of their limits."""
    _require_variant(traj, Variant.HB_operator)
    spec = traj.spec
    t = traj.times
    report = validate_assumption_operator(spec.lam, spec.mu, spec.gamma, traj.t_end)
    L = report.quantities["L"]
    mu_vals = spec.mu.value(t)
    ratio = spec.gamma.value(t) / mu_vals
    growth = spec.mu.derivative(t) / mu_vals
    growth_limit = growth[-1] if spec.mu.value_fn is not None else spec.mu.rate
    ok = (np.abs(ratio - L) <= tol * abs(L)) & (np.abs(growth - growth_limit) <= tol * max(abs(growth_limit), abs(L)))
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return float(t[0])
    if bad[-1] + 1 >= t.size:
        return float(t[-1])
    return float(t[bad[-1] + 1])


# ---------------------------------------------------------------- vanishing damping

def rescaled_energy(traj: Trajectory, twin_lambda: Optional[float] = None):
    """Heavy Ball energies carried to a vanishing-damping run through the time map.

    Returns ``(energy, W_or_total)`` in ``s`` time. For AVD runs this is
    ``E_eta`` and ``W`` of the twin with friction ``twin_lambda`` (default 1);
    for Fast OGDA runs both entries are the total operator energy of the twin.
    """
    _require_variant(traj, Variant.AVD_function, Variant.FOGDA_operator)
    twin, tmap = heavy_twin(traj.spec, twin_lambda)
    s = traj.times
    t = tmap.tau(s)
    dist = traj.positions - _require_anchor(traj.spec.anchor)
    vel = velocities(traj.spec, s, traj.states) / tmap.tau_dot(s)[:, None]
    if twin.variant is Variant.HBF_function:
        eta = default_eta(twin.lam, twin.b, float(t[-1]))
        gaps = np.array([twin.problem.gap(x) for x in traj.positions])
        b_vals = twin.b.value(t)
        energy = _function_energy(gaps, b_vals, twin.lam, eta, dist, vel)
        W = gaps + np.einsum("ij,ij->i", vel, vel) / (2.0 * b_vals)
        return Series(s, energy, "energy"), Series(s, W, "W")
    eps = default_epsilon(twin.lam, twin.mu, twin.gamma, float(t[-1]))
    V = np.array([twin.problem.apply(x) for x in traj.positions])
    total = sum(_operator_components(V, twin.mu.value(t), twin.lam, twin.lam - eps, dist, vel))
    return Series(s, total, "energy"), Series(s, total, "total")


# ---------------------------------------------------------------- residuals and rates

def residual_series(traj: Trajectory, problem=None) -> dict:
    """Named residual series at every node.

    Function variants give ``f_gap`` and ``velocity_norm``; operator variants
    give ``operator_norm``, ``inner_product`` (needs a known zero) and
    ``velocity_norm``.
    """
    spec = traj.spec
    if spec is None:
        raise SpecError("residual_series needs a trajectory produced from a SystemSpec")
    problem = spec.problem if problem is None else problem
    t, p = traj.times, traj.positions
    out = {"velocity_norm": Series(t, np.linalg.norm(velocities(spec, t, traj.states), axis=1), "velocity_norm")}
    if spec.variant.is_operator:
        V = np.array([problem.apply(y) for y in p])
        anchor = _require_anchor(problem.zero)
        out["operator_norm"] = Series(t, np.linalg.norm(V, axis=1), "operator_norm")
        out["inner_product"] = Series(t, np.einsum("ij,ij->i", p - anchor, V), "inner_product")
    else:
        out["f_gap"] = Series(t, np.array([problem.gap(y) for y in p]), "f_gap")
    return out


def decade_edges(window_start: float, t_end: float) -> list[float]:
    """``window_start * 10**k`` for every full decade inside ``[window_start, t_end]``."""
    if not window_start > 0:
        raise ValueError("decade windows need a positive start")
    edges = [window_start]
    while edges[-1] * 10 <= t_end * (1 + 1e-12):
        edges.append(edges[-1] * 10)
    return edges


def certify_rate(series: Series, exponent: float, window_start: float,
                 weight: Optional[np.ndarray] = None, edges: Optional[Sequence[float]] = None,
                 slack: float = RATE_SLACK, strict_factor: float = STRICT_DECAY) -> RateCertificate:
    """Decade-maxima certificate that ``t**exponent * value`` tends to zero.

    Parameters
    ----------
    series : Series
    exponent : float
        Claimed decay power ``p``; the scaled quantity is ``t**p * value``.
    window_start : float
        First decade edge. Decades are ``[w, 10 w], [10 w, 100 w], ...``.
    weight : array, optional
        Extra factor multiplied into the scaled quantity (same length as the
        series), e.g. ``exp(rho t)`` for exponential scalings.
    edges : sequence, optional
        Explicit window edges replacing the decades.
    slack : float
        Relative tolerance on the nonincreasing clause.
    strict_factor : float
        The last maximum must fall below ``strict_factor`` times the first.

    Raises
    ------
    ValueError
        If fewer than two full windows are available.
    """
    t, v = series.times, series.values
    if edges is None:
        edges = decade_edges(window_start, float(t[-1])) if t.size else [window_start]
    edges = [float(e) for e in edges]
    if len(edges) < 3 or edges[-1] > t[-1] * (1 + 1e-12):
        raise ValueError("certify_rate needs at least two full windows of data")
    scaled = (np.abs(t) ** exponent if exponent else np.ones_like(t)) * v
    if weight is not None:
        scaled = scaled * np.asarray(weight, dtype=float)
    maxima = []
    for a, b in zip(edges[:-1], edges[1:]):
        inside = (t >= a * (1 - 1e-12)) & (t <= b * (1 + 1e-12))
        if not inside.any():
            raise ValueError(f"no samples in window [{a}, {b}]")
        maxima.append((a, float(scaled[inside].max())))
    m = [x for _, x in maxima]
    nonincreasing = all(m[k + 1] <= m[k] * (1 + slack) for k in range(len(m) - 1))
    strict = m[-1] < strict_factor * m[0]
    passed = nonincreasing and strict
    verdict = "o" if passed else ("O" if nonincreasing else "fail")
    return RateCertificate(exponent, maxima, passed, slack, verdict, nonincreasing, strict)


def decade_maxima_nonincreasing(series: Series, exponent: float, window_start: float,
                                weight: Optional[np.ndarray] = None, slack: float = RATE_SLACK) -> bool:
    """Only the nonincreasing clause of :func:`certify_rate`."""
    return certify_rate(series, exponent, window_start, weight, slack=slack).nonincreasing


def checkpoint_times(t_start: float, t_end: float) -> list[float]:
    """Decade checkpoints strictly inside the run: ``t_start * 10**k`` (or ``10**k`` from ``t = 0``)."""
    out = []
    c = t_start if t_start > 0 else 1.0
    while c < t_end:
        if c >= t_start:
            out.append(c)
        c *= 10
    return out


def tail_stabilization(traj: Trajectory, checkpoints: Optional[Sequence[float]] = None) -> Series:
    """``|p(t_c) - p(t_end)|`` at each checkpoint."""
    if checkpoints is None:
        checkpoints = checkpoint_times(traj.t_start, traj.t_end)
    cps = np.asarray(checkpoints, dtype=float)
    if cps.size and (np.any(np.diff(cps) <= 0) or cps[0] < traj.t_start or cps[-1] > traj.t_end):
        raise ValueError("checkpoints must be ascending and inside the trajectory range")
    end = traj.positions[-1]
    values = np.array([np.linalg.norm(dense_eval(traj, c).p - end) for c in cps]) if cps.size else np.array([])
    return Series(cps, values, "tail")


def trajectory_diameter(traj: Trajectory) -> float:
    """``max_i |p_i - p_end|`` over the nodes (a lower bound on the true diameter)."""
    return float(np.max(np.linalg.norm(traj.positions - traj.positions[-1], axis=1)))
