"""Time maps linking constant-friction Heavy Ball time ``t`` to vanishing-damping time ``s``.

Function case (Heavy Ball with ``b(t)`` <-> AVD)::

    tau(s)   = (alpha - 1)/lam * log(s/s0) + t0
    sigma(t) = s0 * exp(lam*(t - t0)/(alpha - 1))
    b(t)     = (lam*s0/(alpha - 1))**2 * exp(2*lam*(t - t0)/(alpha - 1))

Operator case (Heavy Ball with ``mu = gamma`` <-> Fast OGDA), where the
friction is pinned to ``lam = 2*(alpha - 1)/alpha``::

    tau(s)   = alpha/2 * log(s/s0) + t0
    sigma(t) = s0 * exp(2*(t - t0)/alpha)
    mu(t)    = gamma(t) = 2*s0/alpha * exp(2*(t - t0)/alpha)

With ``x(s) = y(tau(s))`` the velocities satisfy ``x'(s) = tau'(s) y'(tau(s))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import Scaling, SpecError, SystemSpec, Variant, recover_velocity
from .integrator import TimeRangeError, Trajectory


@dataclass(frozen=True)
class TimeMap:
    case: str
    alpha: float
    s0: float
    t0: float
    lam: Optional[float] = None

    def __post_init__(self):
        if self.case == "identity":
            return
        if self.case not in ("function_case", "operator_case"):
            raise SpecError(f"unknown time-map case {self.case!r}")
        if not self.alpha > 1:
            raise SpecError("time maps need alpha > 1")
        if not self.s0 > 0 or self.t0 < 0:
            raise SpecError("time maps need s0 > 0 and t0 >= 0")
        if self.case == "operator_case":
            object.__setattr__(self, "lam", 2 * (self.alpha - 1) / self.alpha)
        elif self.lam is None or not self.lam > 0:
            raise SpecError("function_case time map needs lambda > 0")

    @classmethod
    def function_case(cls, alpha: float, lam: float, s0: float = 1.0, t0: float = 0.0) -> "TimeMap":
        return cls("function_case", alpha, s0, t0, lam)

    @classmethod
    def operator_case(cls, alpha: float, s0: float = 1.0, t0: float = 0.0) -> "TimeMap":
        return cls("operator_case", alpha, s0, t0)

    @classmethod
    def identity(cls) -> "TimeMap":
        return cls("identity", math.nan, math.nan, math.nan)

    @property
    def below_convergence_threshold(self) -> bool:
        """The map is well defined but the rate transfer needs alpha > 3 (function) / > 2 (operator)."""
        if self.case == "function_case":
            return self.alpha <= 3
        if self.case == "operator_case":
            return self.alpha <= 2
        return False

    @property
    def rate(self) -> float:
        """``(alpha - 1)/lam``, i.e. ``alpha/2`` in the operator case."""
        return (self.alpha - 1) / self.lam

    def tau(self, s):
        if self.case == "identity":
            return s
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < self.s0):
            raise ValueError(f"tau is defined for s >= s0={self.s0!r}")
        out = self.rate * np.log(s_arr / self.s0) + self.t0
        return float(out) if out.ndim == 0 else out

    def sigma(self, t):
        if self.case == "identity":
            return t
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.t0):
            raise ValueError(f"sigma is defined for t >= t0={self.t0!r}")
        out = self.s0 * np.exp((t_arr - self.t0) / self.rate)
        return float(out) if out.ndim == 0 else out

    def tau_dot(self, s):
        if self.case == "identity":
            return np.ones_like(np.asarray(s, dtype=float)) if np.ndim(s) else 1.0
        return self.rate / np.asarray(s, dtype=float) if np.ndim(s) else self.rate / s

    def tau_ddot(self, s):
        if self.case == "identity":
            return np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0
        s_arr = np.asarray(s, dtype=float)
        out = -self.rate / s_arr ** 2
        return float(out) if out.ndim == 0 else out

    def sigma_dot(self, t):
        return self.sigma(t) / self.rate

    def sigma_ddot(self, t):
        return self.sigma(t) / self.rate ** 2

    def velocity_factor(self, direction: str) -> float:
        """Factor multiplying the initial velocity when moving data across the map."""
        if self.case == "identity":
            return 1.0
        if direction == "to_vanishing":
            return self.rate / self.s0
        if direction == "to_heavy":
            return self.s0 / self.rate
        raise ValueError(f"direction must be 'to_vanishing' or 'to_heavy', got {direction!r}")


def tau(tmap: TimeMap, s):
    return tmap.tau(s)


def sigma(tmap: TimeMap, t):
    return tmap.sigma(t)


def special_b(alpha: float, lam: float, s0: float = 1.0, t0: float = 0.0) -> Scaling:
    """Heavy Ball gradient scaling whose rescaled system is AVD with parameter ``alpha``."""
    if not alpha > 3:
        raise SpecError("special_b needs alpha > 3 (otherwise sup b'/b >= lambda)")
    return Scaling.special_function_case(alpha, lam, s0, t0)


def special_mu_gamma(alpha: float, s0: float = 1.0, t0: float = 0.0) -> tuple[Scaling, Scaling, float]:
    """``(mu, gamma, lam)`` whose rescaled operator system is Fast OGDA with ``alpha``."""
    if not alpha > 2:
        raise SpecError("special_mu_gamma needs alpha > 2")
    mu = Scaling.special_operator_case(alpha, s0, t0)
    return mu, mu, 2 * (alpha - 1) / alpha


def map_initial_conditions(tmap: TimeMap, direction: str, position, velocity):
    """Move Cauchy data across the time map.

    ``direction="to_vanishing"`` maps ``(y0, y1)`` to ``(x0, x1)`` and
    ``"to_heavy"`` the reverse. Positions are unchanged; velocities pick up
    ``tau'(s0)`` or its inverse.
    """
    factor = tmap.velocity_factor(direction)
    return np.array(position, dtype=float, copy=True), factor * np.asarray(velocity, dtype=float)


def heavy_twin(spec: SystemSpec, lam: Optional[float] = None, t0: float = 0.0) -> tuple[SystemSpec, TimeMap]:
    """Heavy Ball system equivalent to a vanishing-damping ``spec`` under rescaling.

    ``lam`` is the (free) friction of the function-case twin and defaults to
    1; the operator case fixes it to ``2*(alpha - 1)/alpha``.
    """
    s0, alpha = spec.start_time, spec.alpha
    if spec.variant is Variant.AVD_function:
        lam = 1.0 if lam is None else lam
        tmap = TimeMap.function_case(alpha, lam, s0, t0)
        y0, y1 = map_initial_conditions(tmap, "to_heavy", spec.y0, spec.y1)
        twin = SystemSpec(Variant.HBF_function, spec.problem, t0, y0, y1, lam=lam,
                          b=special_b(alpha, lam, s0, t0))
    elif spec.variant is Variant.FOGDA_operator:
        tmap = TimeMap.operator_case(alpha, s0, t0)
        mu, gamma, lam = special_mu_gamma(alpha, s0, t0)
        y0, y1 = map_initial_conditions(tmap, "to_heavy", spec.y0, spec.y1)
        twin = SystemSpec(Variant.HB_operator, spec.problem, t0, y0, y1, lam=lam, mu=mu, gamma=gamma)
    else:
        raise SpecError(f"{spec.variant.value} is not a vanishing-damping variant")
    return twin, tmap


@dataclass(frozen=True)
class EquivalenceReport:
    sample_times: np.ndarray
    deviations: np.ndarray
    velocity_deviations: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max())

    @property
    def velocity_max_deviation(self) -> float:
        return float(self.velocity_deviations.max())

    @property
    def n_samples(self) -> int:
        return int(self.sample_times.size)

    def to_dict(self) -> dict:
        return {
            "max_deviation": self.max_deviation,
            "velocity_max_deviation": self.velocity_max_deviation,
            "n_samples": self.n_samples,
            "s_first": float(self.sample_times[0]),
            "s_last": float(self.sample_times[-1]),
        }


def _velocity_rows(traj: Trajectory, times: np.ndarray, states: np.ndarray) -> np.ndarray:
    if traj.spec is None:
        raise ValueError("equivalence_check needs trajectories produced from a SystemSpec")
    d = traj.dim
    return np.array([recover_velocity(traj.spec, t, z[:d], z[d:]) for t, z in zip(times, states)])


def equivalence_check(traj_heavy: Trajectory, traj_vanishing: Trajectory, tmap: TimeMap,
                      n_samples: int = 200) -> EquivalenceReport:
    """Compare ``x(s)`` with ``y(tau(s))`` on a log-spaced grid of vanishing-damping times.

    The grid is restricted to the part of ``[s0, s_end]`` whose image under
    ``tau`` stays inside the Heavy Ball trajectory. Velocities are compared in
    ``s`` units: ``|x'(s) - tau'(s) y'(tau(s))|``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    s_lo = max(traj_vanishing.t_start, tmap.sigma(traj_heavy.t_start) if tmap.case != "identity"
               else traj_heavy.t_start)
    s_hi = min(traj_vanishing.t_end, tmap.sigma(traj_heavy.t_end) if tmap.case != "identity"
               else traj_heavy.t_end)
    if abs(s_hi - traj_vanishing.t_end) <= 1e-12 * abs(traj_vanishing.t_end):
        s_hi = traj_vanishing.t_end  # round-off from sigma(tau(s_end)); the clip below keeps t in range
    if not s_hi > s_lo:
        raise TimeRangeError("trajectories share no common time range under the map")
    s = np.geomspace(s_lo, s_hi, n_samples) if s_lo > 0 else np.linspace(s_lo, s_hi, n_samples)
    s[0], s[-1] = s_lo, s_hi
    t = np.clip(np.asarray(tmap.tau(s), dtype=float), traj_heavy.t_start, traj_heavy.t_end)

    zx = traj_vanishing.at(s)
    zy = traj_heavy.at(t)
    d = traj_vanishing.dim
    deviations = np.linalg.norm(zx[:, :d] - zy[:, :d], axis=1)
    vx = _velocity_rows(traj_vanishing, s, zx)
    vy = _velocity_rows(traj_heavy, t, zy)
    vel_dev = np.linalg.norm(vx - np.asarray(tmap.tau_dot(s))[:, None] * vy, axis=1)
    return EquivalenceReport(s, deviations, vel_dev)
