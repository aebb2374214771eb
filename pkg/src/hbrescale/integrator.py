"""Explicit Runge-Kutta integration with cubic Hermite dense output.

Two methods are provided: the embedded Dormand-Prince 4(5) pair with a PI
step-size controller, and classical fixed-step RK4 (used as an independent
oracle). Every accepted node stores the state and the field value there, and
:func:`dense_eval` interpolates between nodes with the cubic Hermite
polynomial built from those two pieces of data. There is no extrapolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .dynamics import State, SystemSpec, initial_state, make_field

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# 5th-order weights minus embedded 4th-order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

SAFETY = 0.9
BETA_1 = 0.7 / 4
BETA_2 = 0.4 / 4
FAC_MIN, FAC_MAX = 0.2, 5.0
UNDERFLOW = 1e-14


class IntegrationError(RuntimeError):
    """Integration stopped early; ``partial`` holds every node accepted so far."""

    def __init__(self, message: str, partial: "Trajectory"):
        super().__init__(message)
        self.partial = partial
        self.last_time = float(partial.times[-1])


class TimeRangeError(ValueError):
    """Requested time lies outside the integrated window."""


@dataclass(frozen=True)
class IntegratorControls:
    method: str = "dormand_prince"
    rtol: float = 1e-9
    atol: float = 1e-12
    h_init: Optional[float] = None
    h_max: float = math.inf
    h: Optional[float] = None
    max_steps: int = 1_000_000
    sample_times: Optional[tuple] = None

    def __post_init__(self):
        if self.method == "dormand_prince":
            if not (self.rtol > 0 and self.atol > 0 and self.h_max > 0):
                raise ValueError("rtol, atol and h_max must be positive")
            if self.h_init is not None and not self.h_init > 0:
                raise ValueError("h_init must be positive")
        elif self.method == "rk4_fixed":
            if self.h is None or not self.h > 0:
                raise ValueError("rk4_fixed needs a positive step h")
        else:
            raise ValueError(f"unknown integration method {self.method!r}")
        if not (isinstance(self.max_steps, int) and self.max_steps > 0):
            raise ValueError("max_steps must be a positive integer")
        if self.sample_times is not None:
            ts = tuple(float(t) for t in self.sample_times)
            if any(b < a for a, b in zip(ts, ts[1:])):
                raise ValueError("sample_times must be ascending")
            object.__setattr__(self, "sample_times", ts)

    @classmethod
    def rk4(cls, h: float, **kw) -> "IntegratorControls":
        return cls(method="rk4_fixed", h=h, **kw)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    controls: IntegratorControls
    spec: Optional[SystemSpec] = None
    samples: Optional[np.ndarray] = None
    n_rejected: int = 0
    n_evals: int = 0

    @property
    def dim(self) -> int:
        return self.states.shape[1] // 2

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, : self.dim]

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    def node(self, i: int) -> State:
        return State.from_flat(float(self.times[i]), self.states[i])

    def at(self, t) -> np.ndarray:
        """Flat dense state(s) at scalar or array ``t``."""
        return _hermite(self, np.asarray(t, dtype=float))


def _hermite(traj: Trajectory, t: np.ndarray) -> np.ndarray:
    times = traj.times
    scalar = t.ndim == 0
    tt = np.atleast_1d(t)
    if tt.size and (tt.min() < times[0] or tt.max() > times[-1]):
        bad = tt[(tt < times[0]) | (tt > times[-1])][0]
        raise TimeRangeError(f"t={bad!r} outside [{times[0]!r}, {times[-1]!r}]")
    idx = np.clip(np.searchsorted(times, tt, side="right") - 1, 0, times.size - 2)
    t0, t1 = times[idx], times[idx + 1]
    h = (t1 - t0)[:, None]
    th = ((tt - t0) / (t1 - t0))[:, None]
    th2, th3 = th * th, th * th * th
    z0, z1 = traj.states[idx], traj.states[idx + 1]
    f0, f1 = traj.derivs[idx], traj.derivs[idx + 1]
    out = ((2 * th3 - 3 * th2 + 1) * z0 + (th3 - 2 * th2 + th) * h * f0
           + (-2 * th3 + 3 * th2) * z1 + (th3 - th2) * h * f1)
    # exact reproduction of nodes
    hit_left = tt == t0
    hit_right = tt == t1
    out[hit_left] = z0[hit_left]
    out[hit_right] = z1[hit_right]
    return out[0] if scalar else out


def dense_eval(traj: Trajectory, t: float) -> State:
    """Cubic Hermite interpolant of the trajectory at time ``t``."""
    if traj.times.size == 1:
        if t != traj.times[0]:
            raise TimeRangeError(f"t={t!r} outside the single-node trajectory")
        return traj.node(0)
    return State.from_flat(float(t), _hermite(traj, np.asarray(float(t))))


def _error_norm(err: np.ndarray, z: np.ndarray, z_new: np.ndarray, atol: float, rtol: float) -> float:
    sc = atol + rtol * np.maximum(np.abs(z), np.abs(z_new))
    return math.sqrt(float(np.mean((err / sc) ** 2)))


def _initial_step(fn, t, z, f0, direction_span, atol, rtol) -> float:
    # Hairer-Norsett-Wanner starting step heuristic for a 5th-order method
    sc = atol + rtol * np.abs(z)
    d0 = math.sqrt(float(np.mean((z / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    f1 = fn(t + h0, z + h0 * f0)
    d2 = math.sqrt(float(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, direction_span)


def _dormand_prince(fn, t_start, z0, t_end, controls):
    span = t_end - t_start
    atol, rtol = controls.atol, controls.rtol
    t, z = t_start, z0
    f = fn(t, z)
    n_evals = 1
    times, states, derivs = [t], [z], [f]
    h = controls.h_init if controls.h_init is not None else _initial_step(
        fn, t, z, f, span, atol, rtol)
    n_evals += 0 if controls.h_init is not None else 1
    h = min(h, controls.h_max)
    err_prev = 1e-4
    rejected_last = False
    n_rejected = 0
    a2, a3, a4, a5, a6, a7 = _A[1:]
    e1, _, e3, e4, e5, e6, e7 = _E
    steps = 0

    def partial():
        return np.array(times), np.array(states), np.array(derivs), n_rejected, n_evals

    while t < t_end:
        if steps >= controls.max_steps:
            raise _Stop(f"max_steps={controls.max_steps} exceeded at t={t!r}", partial())
        if h < UNDERFLOW * abs(span):
            raise _Stop(f"step size underflow (h={h!r}) at t={t!r}", partial())
        last = t + h >= t_end or t + 1.0001 * h >= t_end
        if last:
            h = t_end - t
        t_new = t_end if last else t + h

        k1 = f
        k2 = fn(t + _C[1] * h, z + h * (a2[0] * k1))
        k3 = fn(t + _C[2] * h, z + h * (a3[0] * k1 + a3[1] * k2))
        k4 = fn(t + _C[3] * h, z + h * (a4[0] * k1 + a4[1] * k2 + a4[2] * k3))
        k5 = fn(t + _C[4] * h, z + h * (a5[0] * k1 + a5[1] * k2 + a5[2] * k3 + a5[3] * k4))
        k6 = fn(t + h, z + h * (a6[0] * k1 + a6[1] * k2 + a6[2] * k3 + a6[3] * k4 + a6[4] * k5))
        z_new = z + h * (a7[0] * k1 + a7[2] * k3 + a7[3] * k4 + a7[4] * k5 + a7[5] * k6)
        k7 = fn(t_new, z_new)
        n_evals += 6
        steps += 1

        err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7)
        err = _error_norm(err_vec, z, z_new, atol, rtol)
        if not math.isfinite(err):
            n_rejected += 1
            rejected_last = True
            h *= FAC_MIN
            continue

        if err <= 1.0:
            if err == 0.0:
                fac = FAC_MAX
            else:
                fac = SAFETY * err ** (-BETA_1) * err_prev ** BETA_2
                fac = min(FAC_MAX, max(FAC_MIN, fac))
            if rejected_last:
                fac = min(fac, 1.0)
            err_prev = max(err, 1e-4)
            rejected_last = False
            t, z, f = t_new, z_new, k7
            times.append(t)
            states.append(z)
            derivs.append(f)
            h = min(h * fac, controls.h_max)
        else:
            n_rejected += 1
            rejected_last = True
            h *= max(FAC_MIN, SAFETY * err ** (-BETA_1))

    return partial()


def _rk4(fn, t_start, z0, t_end, controls):
    span = t_end - t_start
    n = max(1, int(math.ceil(span / controls.h - 1e-9)))
    if n > controls.max_steps:
        raise ValueError(f"rk4_fixed needs {n} steps > max_steps={controls.max_steps}")
    h = span / n
    times = t_start + h * np.arange(n + 1)
    times[-1] = t_end
    states = np.empty((n + 1, z0.size))
    derivs = np.empty_like(states)
    z = z0
    f = fn(t_start, z)
    states[0], derivs[0] = z, f
    for i in range(n):
        t = times[i]
        k1 = f
        k2 = fn(t + 0.5 * h, z + 0.5 * h * k1)
        k3 = fn(t + 0.5 * h, z + 0.5 * h * k2)
        k4 = fn(t + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        f = fn(times[i + 1], z)
        states[i + 1], derivs[i + 1] = z, f
    return times, states, derivs, 0, 4 * n + 1


class _Stop(Exception):
    def __init__(self, message, payload):
        super().__init__(message)
        self.payload = payload


def integrate(field: Callable[[float, np.ndarray], np.ndarray], t_start: float,
              z0: Union[State, np.ndarray], t_end: float,
              controls: Optional[IntegratorControls] = None,
              spec: Optional[SystemSpec] = None) -> Trajectory:
    """Integrate ``z' = field(t, z)`` from ``t_start`` to ``t_end``.

    Parameters
    ----------
    field : callable
        ``field(t, z) -> dz`` on flat arrays (a :class:`~hbrescale.dynamics.Field`
        or any plain function).
    t_start, t_end : float
        Integration window; ``t_end`` must exceed ``t_start``.
    z0 : State or ndarray
        Initial state.
    controls : IntegratorControls, optional
        Method and tolerances; defaults to Dormand-Prince at ``rtol=1e-9``.
    spec : SystemSpec, optional
        Attached to the returned trajectory for downstream diagnostics.

    Returns
    -------
    Trajectory
        All accepted nodes. If ``controls.sample_times`` is set, their dense
        values are stored in ``Trajectory.samples``.

    Raises
    ------
    IntegrationError
        On ``max_steps`` exhaustion or step-size underflow, carrying the
        partial trajectory up to the last good node.
    """
    controls = controls or IntegratorControls()
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    z = (z0.flat() if isinstance(z0, State) else np.array(z0, dtype=float)).reshape(-1)
    if controls.sample_times is not None and controls.sample_times and (
            controls.sample_times[0] < t_start or controls.sample_times[-1] > t_end):
        raise ValueError("sample_times must lie inside the integration window")
    stepper = _dormand_prince if controls.method == "dormand_prince" else _rk4
    try:
        times, states, derivs, n_rej, n_ev = stepper(field, float(t_start), z, float(t_end), controls)
    except _Stop as stop:
        times, states, derivs, n_rej, n_ev = stop.payload
        partial = Trajectory(times, states, derivs, controls, spec, None, n_rej, n_ev)
        raise IntegrationError(str(stop), partial) from None
    traj = Trajectory(np.asarray(times, float), np.asarray(states, float), np.asarray(derivs, float),
                      controls, spec, None, n_rej, n_ev)
    if controls.sample_times:
        traj.samples = traj.at(np.array(controls.sample_times))
    return traj


def resample(traj: Trajectory, times) -> Trajectory:
    """Trajectory whose nodes are the dense values of ``traj`` at ``times``.

    Derivatives are re-evaluated from the field of ``traj.spec`` so the
    result is a valid trajectory for every downstream diagnostic.
    """
    if traj.spec is None:
        raise ValueError("resample needs a trajectory produced from a SystemSpec")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("resample times must be strictly increasing with at least two entries")
    states = traj.at(times)
    field = make_field(traj.spec)
    derivs = np.array([field(t, z) for t, z in zip(times, states)])
    return Trajectory(times, states, derivs, traj.controls, traj.spec)


def simulate(spec: SystemSpec, t_end: float, controls: Optional[IntegratorControls] = None) -> Trajectory:
    """Integrate the first-order form of ``spec`` from its start time to ``t_end``."""
    return integrate(make_field(spec), spec.start_time, initial_state(spec), t_end, controls, spec)
