"""First-order fields for the four inertial systems and their parameter assumptions.

Each system is integrated in the variables ``(p, u)`` where ``p`` is the
position and ``u`` an auxiliary momentum-like variable:

========================  ==============================  ===================================
variant                   auxiliary variable              field
========================  ==============================  ===================================
``HBF_function``          ``u = lam*y + y'``              ``p' = u - lam*p``,
                                                          ``u' = -b(t) grad f(p)``
``AVD_function``          ``u = x'``                      ``p' = u``,
                                                          ``u' = -(alpha/s) u - grad f(p)``
``HB_operator``           ``u = lam*y + y' + mu(t)V(y)``  ``p' = u - lam*p - mu(t)V(p)``,
                                                          ``u' = (mu'(t) - gamma(t)) V(p)``
``FOGDA_operator``        ``u = x' + V(x)``               ``p' = u - V(p)``,
                                                          ``u' = -(alpha/s) u + alpha/(2s) V(p)``
========================  ==============================  ===================================

The operator reformulations avoid differentiating ``V`` along the trajectory.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from .problems import OperatorProblem, ScalarProblem

# Strict inequalities in the assumptions must hold with at least this slack.
STRICT_MARGIN = 1e-12
GRID_POINTS = 10_000


class SpecError(ValueError):
    """Raised when a system description is incomplete or violates a parameter range."""


class Variant(str, Enum):
    HBF_function = "HBF_function"
    AVD_function = "AVD_function"
    HB_operator = "HB_operator"
    FOGDA_operator = "FOGDA_operator"

    @property
    def is_operator(self) -> bool:
        return self in (Variant.HB_operator, Variant.FOGDA_operator)

    @property
    def is_heavy_ball(self) -> bool:
        return self in (Variant.HBF_function, Variant.HB_operator)


# ---------------------------------------------------------------------------
# Scalings b(t), mu(t), gamma(t)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scaling:
    """Positive nondecreasing time scaling on ``[t0, +inf)``.

    Closed-form families are stored in the canonical form
    ``kappa * exp(rate * (t - shift)) * t**power`` which makes their growth
    ratios available analytically. ``custom`` scalings carry arbitrary
    callables instead and are analysed by grid sampling.
    """

    family: str
    params: dict
    t0: float = 0.0
    kappa: float = 1.0
    rate: float = 0.0
    shift: float = 0.0
    power: float = 0.0
    value_fn: Optional[Callable] = field(default=None, repr=False, compare=False)
    derivative_fn: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def closed_form(self) -> bool:
        return self.value_fn is None

    def value(self, t):
        if self.value_fn is not None:
            return self.value_fn(t)
        out = self.kappa * np.exp(self.rate * (np.asarray(t, dtype=float) - self.shift))
        if self.power:
            out = out * np.asarray(t, dtype=float) ** self.power
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        if self.derivative_fn is not None:
            return self.derivative_fn(t)
        t_arr = np.asarray(t, dtype=float)
        growth = self.rate + (self.power / t_arr if self.power else 0.0)
        out = self.value(t_arr) * growth
        return float(out) if np.ndim(out) == 0 else out

    def log_coefficient(self) -> float:
        """``log kappa - rate*shift`` so that ``value = exp(coef + rate*t) * t**power``."""
        return math.log(self.kappa) - self.rate * self.shift

    # -- constructors --------------------------------------------------------

    @classmethod
    def constant(cls, kappa: float = 1.0, t0: float = 0.0) -> "Scaling":
        _positive(kappa=kappa)
        return cls("constant", {"kappa": kappa}, t0=t0, kappa=kappa)

    @classmethod
    def exponential(cls, kappa: float, rho: float, t0: float = 0.0) -> "Scaling":
        _positive(kappa=kappa)
        if rho < 0:
            raise SpecError("exponential scaling needs rho >= 0 (nondecreasing)")
        return cls("exponential", {"kappa": kappa, "rho": rho}, t0=t0, kappa=kappa, rate=rho)

    @classmethod
    def polynomial(cls, kappa: float, rho: float, t0: float) -> "Scaling":
        _positive(kappa=kappa)
        if rho < 0:
            raise SpecError("polynomial scaling needs rho >= 0 (nondecreasing)")
        if rho > 0 and t0 <= 0:
            raise SpecError("polynomial scaling kappa*t**rho needs t0 > 0 to stay positive")
        return cls("polynomial", {"kappa": kappa, "rho": rho}, t0=t0, kappa=kappa, power=rho)

    @classmethod
    def special_function_case(cls, alpha: float, lam: float, s0: float, t0: float) -> "Scaling":
        """``(lam*s0/(alpha-1))**2 * exp(2*lam*(t - t0)/(alpha-1))``."""
        if alpha <= 1:
            raise SpecError("special_function_case needs alpha > 1")
        _positive(lam=lam, s0=s0)
        return cls("special_function_case", {"alpha": alpha, "lambda": lam, "s0": s0, "t0": t0},
                   t0=t0, kappa=(lam * s0 / (alpha - 1)) ** 2, rate=2 * lam / (alpha - 1), shift=t0)

    @classmethod
    def special_operator_case(cls, alpha: float, s0: float, t0: float) -> "Scaling":
        """``(2*s0/alpha) * exp(2*(t - t0)/alpha)``."""
        _positive(alpha=alpha, s0=s0)
        return cls("special_operator_case", {"alpha": alpha, "s0": s0, "t0": t0},
                   t0=t0, kappa=2 * s0 / alpha, rate=2 / alpha, shift=t0)

    @classmethod
    def custom(cls, value: Callable, derivative: Callable, t0: float = 0.0,
               name: str = "custom") -> "Scaling":
        return cls("custom", {"name": name}, t0=t0, value_fn=value, derivative_fn=derivative)

    @classmethod
    def from_config(cls, cfg: dict, t0: float) -> "Scaling":
        """Build from a ``{"family": ..., <params>}`` mapping (CLI schema)."""
        cfg = dict(cfg)
        family = cfg.pop("family", None)
        builders = {
            "constant": lambda kappa=1.0: cls.constant(kappa, t0),
            "exponential": lambda kappa, rho: cls.exponential(kappa, rho, t0),
            "polynomial": lambda kappa, rho: cls.polynomial(kappa, rho, t0),
            "special_function_case": lambda alpha, s0, t0=t0, **kw: cls.special_function_case(
                alpha, _only_lambda(kw), s0, t0),
            "special_operator_case": lambda alpha, s0, t0=t0: cls.special_operator_case(alpha, s0, t0),
        }
        if family not in builders:
            raise SpecError(f"unknown scaling family {family!r}")
        try:
            return builders[family](**cfg)
        except TypeError as exc:
            raise SpecError(f"bad parameters for scaling family {family!r}: {exc}") from None


def _only_lambda(kw: dict) -> float:
    # "lambda" is a keyword, so it cannot be a named parameter of the builder
    if set(kw) != {"lambda"}:
        raise TypeError(f"expected exactly the extra key 'lambda', got {sorted(kw)}")
    return kw["lambda"]


def _positive(**values: float) -> None:
    for name, v in values.items():
        if not v > 0:
            raise SpecError(f"{name} must be positive, got {v!r}")


# ---------------------------------------------------------------------------
# System description and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemSpec:
    variant: Variant
    problem: Union[ScalarProblem, OperatorProblem]
    start_time: float
    y0: np.ndarray
    y1: np.ndarray
    lam: Optional[float] = None
    alpha: Optional[float] = None
    b: Optional[Scaling] = None
    mu: Optional[Scaling] = None
    gamma: Optional[Scaling] = None

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "y0", np.array(self.y0, dtype=float).reshape(-1))
        object.__setattr__(self, "y1", np.array(self.y1, dtype=float).reshape(-1))
        dim = self.problem.dim
        if self.y0.shape != (dim,) or self.y1.shape != (dim,):
            raise SpecError(f"initial data must have dimension {dim}")
        if variant.is_operator != isinstance(self.problem, OperatorProblem):
            raise SpecError(f"{variant.value} needs a {'operator' if variant.is_operator else 'scalar'} problem")

        if variant.is_heavy_ball:
            if self.lam is None or not self.lam > 0:
                raise SpecError(f"{variant.value} needs lambda > 0")
            if self.start_time < 0:
                raise SpecError("Heavy Ball variants need start_time t0 >= 0")
            needed = ("b",) if variant is Variant.HBF_function else ("mu", "gamma")
            for name in needed:
                if getattr(self, name) is None:
                    raise SpecError(f"{variant.value} needs scaling {name!r}")
        else:
            threshold = 3.0 if variant is Variant.AVD_function else 2.0
            if self.alpha is None or not self.alpha > threshold:
                raise SpecError(f"{variant.value} needs alpha > {threshold:g}")
            if not self.start_time > 0:
                raise SpecError(f"{variant.value} needs start_time s0 > 0")

    @property
    def dim(self) -> int:
        return self.problem.dim

    @property
    def anchor(self) -> Optional[np.ndarray]:
        return self.problem.zero if self.variant.is_operator else self.problem.minimizer


@dataclass(frozen=True)
class State:
    time: float
    p: np.ndarray
    u: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.p, self.u])

    @classmethod
    def from_flat(cls, time: float, z: np.ndarray) -> "State":
        d = z.size // 2
        return cls(time, z[:d].copy(), z[d:].copy())


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

class Field:
    """Right-hand side ``F(t, z)`` on the flat state ``z = (p, u)``."""

    def __init__(self, spec: SystemSpec, fn: Callable[[float, np.ndarray, np.ndarray], tuple]):
        self.spec = spec
        self.dim = spec.dim
        self._fn = fn

    def __call__(self, t: float, z: np.ndarray) -> np.ndarray:
        d = self.dim
        dp, du = self._fn(t, z[:d], z[d:])
        return np.concatenate([dp, du])

    def evaluate(self, state: State) -> State:
        """Field value at ``state`` packaged as a State-derivative."""
        dp, du = self._fn(state.time, np.asarray(state.p, float), np.asarray(state.u, float))
        return State(state.time, dp, du)

    def initial_state(self) -> State:
        return initial_state(self.spec)


def _require(spec: SystemSpec, variant: Variant) -> None:
    if spec.variant is not variant:
        raise SpecError(f"expected a {variant.value} spec, got {spec.variant.value}")


def _check_positive_time(s: float) -> None:
    if not s > 0:
        raise ValueError(f"vanishing-damping field is singular at s={s!r} <= 0")


def hbf_rhs(spec: SystemSpec) -> Field:
    _require(spec, Variant.HBF_function)
    lam, b, grad = spec.lam, spec.b, spec.problem.gradient

    def fn(t, p, u):
        return u - lam * p, -b.value(t) * grad(p)

    return Field(spec, fn)


def avd_rhs(spec: SystemSpec) -> Field:
    _require(spec, Variant.AVD_function)
    alpha, grad = spec.alpha, spec.problem.gradient

    def fn(s, p, u):
        _check_positive_time(s)
        return u.copy(), -(alpha / s) * u - grad(p)

    return Field(spec, fn)


def hbop_rhs(spec: SystemSpec) -> Field:
    _require(spec, Variant.HB_operator)
    lam, mu, gamma, V = spec.lam, spec.mu, spec.gamma, spec.problem.apply

    def fn(t, p, u):
        Vp = V(p)
        return u - lam * p - mu.value(t) * Vp, (mu.derivative(t) - gamma.value(t)) * Vp

    return Field(spec, fn)


def fogda_rhs(spec: SystemSpec) -> Field:
    _require(spec, Variant.FOGDA_operator)
    alpha, V = spec.alpha, spec.problem.apply

    def fn(s, p, u):
        _check_positive_time(s)
        Vp = V(p)
        return u - Vp, -(alpha / s) * u + (alpha / (2 * s)) * Vp

    return Field(spec, fn)


_FIELDS = {
    Variant.HBF_function: hbf_rhs,
    Variant.AVD_function: avd_rhs,
    Variant.HB_operator: hbop_rhs,
    Variant.FOGDA_operator: fogda_rhs,
}


def make_field(spec: SystemSpec) -> Field:
    return _FIELDS[spec.variant](spec)


def initial_state(spec: SystemSpec) -> State:
    """Initial ``(p, u)`` built from the second-order Cauchy data ``(y0, y1)``."""
    t0, y0, y1 = spec.start_time, spec.y0, spec.y1
    v = spec.variant
    if v is Variant.HBF_function:
        u0 = spec.lam * y0 + y1
    elif v is Variant.AVD_function:
        u0 = y1.copy()
    elif v is Variant.HB_operator:
        u0 = spec.lam * y0 + y1 + spec.mu.value(t0) * spec.problem.apply(y0)
    else:
        u0 = y1 + spec.problem.apply(y0)
    return State(t0, y0.copy(), u0)


def recover_velocity(spec: SystemSpec, t: float, p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Velocity ``y'(t)`` (or ``x'(s)``) from the first-order state."""
    v = spec.variant
    if v is Variant.HBF_function:
        return u - spec.lam * p
    if v is Variant.AVD_function:
        return np.array(u, dtype=float, copy=True)
    if v is Variant.HB_operator:
        return u - spec.lam * p - spec.mu.value(t) * spec.problem.apply(p)
    return u - spec.problem.apply(p)


def velocities(spec: SystemSpec, times: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Row-wise :func:`recover_velocity` over an ``(n, 2*dim)`` state array."""
    d = spec.dim
    return np.array([recover_velocity(spec, t, z[:d], z[d:]) for t, z in zip(times, states)])


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    passed: bool
    quantities: dict
    violated: list
    outcome: str = "pass"
    sampled: bool = False
    lambda_window: Optional[tuple] = None

    def to_dict(self) -> dict:
        out = {"pass": self.passed, "outcome": self.outcome, "violated": list(self.violated),
               "sampled": self.sampled, "quantities": dict(self.quantities)}
        if self.lambda_window is not None:
            out["lambda_window"] = list(self.lambda_window)
        return out


def _grid(t0: float, horizon: float, n: int = GRID_POINTS) -> np.ndarray:
    # log-spaced offsets from t0; resolves both the start and the tail
    span = horizon - t0
    return t0 + np.geomspace(span * 1e-6, span, n)


def _sampled_ratio(num: Callable, den: Callable, grid: np.ndarray) -> np.ndarray:
    return np.array([num(t) / den(t) for t in grid], dtype=float)


def validate_assumption_function(lam: float, b: Scaling, horizon: float) -> AssumptionReport:
    """Check ``sup_{t >= t0} b'(t)/b(t) < lam``.

    The supremum is analytic for closed-form scalings (``rho`` for the
    exponential family, ``rho/t0`` for the polynomial one, ``2*lam/(alpha-1)``
    for the special function-case scaling); custom scalings are sampled on a
    log-spaced grid over ``[t0, horizon]`` and flagged as such.
    """
    if not horizon > b.t0:
        raise ValueError("horizon must exceed the scaling's start time")
    sampled = not b.closed_form
    if b.closed_form:
        if b.power and b.t0 <= 0:
            sup_ratio = math.inf
        else:
            sup_ratio = b.rate + (b.power / b.t0 if b.power else 0.0)
        nondecreasing = True
    else:
        grid = _grid(b.t0, horizon)
        ratios = _sampled_ratio(b.derivative, b.value, grid)
        sup_ratio = float(ratios.max())
        nondecreasing = bool(np.all(ratios >= 0))
        warnings.warn("sup b'/b estimated on a sampling grid", RuntimeWarning, stacklevel=2)

    margin = lam - sup_ratio
    violated = []
    if not margin > STRICT_MARGIN:
        violated.append("sup_bdot_over_b_below_lambda")
    if not nondecreasing:
        violated.append("b_nondecreasing")
    return AssumptionReport(
        passed=not violated,
        quantities={"lambda": lam, "sup_bdot_over_b": sup_ratio, "margin": margin},
        violated=violated, outcome="pass" if not violated else "fail", sampled=sampled,
    )


def _analytic_limit_ratio(num: Scaling, den: Scaling) -> float:
    """``lim num(t)/den(t)`` for closed-form scalings (0, finite, or inf)."""
    d_rate = num.rate - den.rate
    d_power = num.power - den.power
    if d_rate != 0:
        return math.inf if d_rate > 0 else 0.0
    if d_power != 0:
        return math.inf if d_power > 0 else 0.0
    return math.exp(num.log_coefficient() - den.log_coefficient())


def _special_operator_alpha(mu: Scaling, gamma: Scaling) -> Optional[float]:
    if mu.family == gamma.family == "special_operator_case" and mu.params == gamma.params:
        return mu.params["alpha"]
    return None


def validate_assumption_operator(lam: float, mu: Scaling, gamma: Scaling,
                                 horizon: float) -> AssumptionReport:
    """Check the three operator-case growth conditions.

    * ``L := lim gamma/mu`` exists and is positive,
    * ``sup mu'/gamma < 1``,
    * ``2*lam - 3*L + inf mu'/mu > 0``.

    For non closed-form scalings ``L`` is read off at the horizon and accepted
    only when ``gamma/mu`` varies by at most ``1e-6`` (relative) over the last
    decade of the window; otherwise the outcome is ``"indeterminate"``.
    """
    t0 = max(mu.t0, gamma.t0)
    if not horizon > t0:
        raise ValueError("horizon must exceed the scalings' start time")
    sampled = False
    indeterminate = False
    grid = None

    if mu.closed_form and gamma.closed_form:
        L = _analytic_limit_ratio(gamma, mu)
        # mu'/mu = rate + power/t decreases to rate
        inf_growth = mu.rate
        if mu.rate == gamma.rate and mu.power == gamma.power:
            # mu'/gamma = (mu/gamma) * (rate + power/t) is nonincreasing in t
            c = math.exp(mu.log_coefficient() - gamma.log_coefficient())
            sup_md_g = c * (mu.rate + (mu.power / t0 if mu.power else 0.0))
        else:
            grid = _grid(t0, horizon)
            sup_md_g = float(_sampled_ratio(mu.derivative, gamma.value, grid).max())
            sampled = True
    else:
        sampled = True
        grid = _grid(t0, horizon)
        ratio = _sampled_ratio(gamma.value, mu.value, grid)
        L = float(ratio[-1])
        tail = ratio[grid >= max(t0, horizon / 10.0)]
        if tail.size < 2:
            tail = ratio[-max(2, grid.size // 10):]
        spread = float(tail.max() - tail.min())
        if not (np.isfinite(L) and spread <= 1e-6 * abs(L)):
            indeterminate = True
        sup_md_g = float(_sampled_ratio(mu.derivative, gamma.value, grid).max())
        inf_growth = float(_sampled_ratio(mu.derivative, mu.value, grid).min())

    if sampled:
        warnings.warn("operator assumption quantities estimated on a sampling grid",
                      RuntimeWarning, stacklevel=2)

    growth = 2 * lam - 3 * L + inf_growth if math.isfinite(L) else -math.inf
    quantities = {
        "lambda": lam,
        "L": L,
        "sup_mudot_over_gamma": sup_md_g,
        "inf_mudot_over_mu": inf_growth,
        "growth_condition": growth,
        "lambda_minus_L": lam - L if math.isfinite(L) else -math.inf,
    }
    violated = []
    if indeterminate:
        violated.append("limit_gamma_over_mu_exists")
    elif not (math.isfinite(L) and L > STRICT_MARGIN):
        violated.append("limit_gamma_over_mu_positive")
    if not 1.0 - sup_md_g > STRICT_MARGIN:
        violated.append("sup_mudot_over_gamma_below_one")
    if not growth > STRICT_MARGIN:
        violated.append("growth_condition_positive")

    window = None
    alpha = _special_operator_alpha(mu, gamma)
    if alpha is not None:
        window = (3 * (alpha - 1) / (2 * alpha - 1), alpha - 1)
        quantities["lambda_window_low"], quantities["lambda_window_high"] = window
        quantities["lambda_window_empty"] = not window[0] < window[1]

    if indeterminate:
        outcome = "indeterminate"
    else:
        outcome = "pass" if not violated else "fail"
    return AssumptionReport(passed=not violated, quantities=quantities, violated=violated,
                            outcome=outcome, sampled=sampled, lambda_window=window)
