"""Convex test objectives and monotone test operators with analytic oracles.

Every catalog entry carries its solution (minimizer / zero) in closed form so
that energies and residuals along simulated trajectories can be evaluated
against the exact anchor point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np

SCALAR_CATALOG = ("quadratic", "least_squares", "logsumexp", "huberized_norm")
OPERATOR_CATALOG = (
    "rotation",
    "bilinear_saddle",
    "affine_monotone",
    "gradient_as_operator",
    "negated_identity_for_tests",
)

# Random-pair checks sample uniformly from this cube.
SAMPLE_BOX = 5.0


class ProblemError(ValueError):
    """Raised for unknown catalog ids or inconsistent problem parameters."""


@dataclass(frozen=True)
class ScalarProblem:
    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    inf_value: float
    minimizer: Optional[np.ndarray] = None
    grad_lipschitz: Optional[float] = None
    name: str = "custom"
    gap_fn: Optional[Callable[[np.ndarray], float]] = field(default=None, repr=False)

    def gap(self, x: np.ndarray) -> float:
        """Optimality gap ``f(x) - inf f``, computed without cancellation when possible."""
        if self.gap_fn is not None:
            return self.gap_fn(x)
        return max(self.value(x) - self.inf_value, 0.0)


@dataclass(frozen=True)
class OperatorProblem:
    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    zero: Optional[np.ndarray] = None
    name: str = "custom"


@dataclass(frozen=True)
class MonotonicityReport:
    passed: bool
    worst_inner_product: float
    witness: tuple[np.ndarray, np.ndarray]


def _vector(params: Mapping[str, Any], key: str, dim: int, default) -> np.ndarray:
    raw = params.get(key)
    if raw is None:
        return np.asarray(default, dtype=float)
    vec = np.asarray(raw, dtype=float).reshape(-1)
    if vec.shape != (dim,):
        raise ProblemError(f"parameter {key!r} has length {vec.size}, expected dim={dim}")
    return vec


def _matrix(params: Mapping[str, Any], key: str) -> Optional[np.ndarray]:
    raw = params.get(key)
    if raw is None:
        return None
    mat = np.asarray(raw, dtype=float)
    if mat.ndim != 2:
        raise ProblemError(f"parameter {key!r} must be a 2-D array")
    return mat


def _check_keys(catalog_id: str, params: Mapping[str, Any], allowed: set[str]) -> None:
    unknown = set(params) - allowed
    if unknown:
        raise ProblemError(f"unknown parameters for {catalog_id}: {sorted(unknown)}")


def _quadratic(dim, params, rng) -> ScalarProblem:
    _check_keys("quadratic", params, {"spectrum", "center"})
    spectrum = _vector(params, "spectrum", dim, np.linspace(1.0, 0.1, dim))
    if np.any(spectrum < 0):
        raise ProblemError("quadratic spectrum must be nonnegative (positive semidefinite)")
    center = _vector(params, "center", dim, np.zeros(dim))

    def value(x):
        d = x - center
        return 0.5 * float(np.dot(spectrum * d, d))

    def gradient(x):
        return spectrum * (x - center)

    return ScalarProblem(
        dim=dim, value=value, gradient=gradient, inf_value=0.0,
        minimizer=center.copy(), grad_lipschitz=float(spectrum.max()) if spectrum.max() > 0 else None,
        name="quadratic", gap_fn=value,
    )


def _least_squares(dim, params, rng) -> ScalarProblem:
    _check_keys("least_squares", params, {"A", "b"})
    A = _matrix(params, "A")
    if A is None:
        A = rng.standard_normal((dim + 2, dim))
    if A.shape[1] != dim:
        raise ProblemError(f"least_squares A has {A.shape[1]} columns, expected dim={dim}")
    m = A.shape[0]
    b = params.get("b")
    b = rng.standard_normal(m) if b is None else np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (m,):
        raise ProblemError(f"least_squares b has length {b.size}, expected {m}")
    x_star = np.linalg.lstsq(A, b, rcond=None)[0]
    r_star = A @ x_star - b
    inf_value = 0.5 * float(r_star @ r_star)
    AtA = A.T @ A

    def value(x):
        r = A @ x - b
        return 0.5 * float(r @ r)

    def gradient(x):
        return A.T @ (A @ x - b)

    def gap(x):
        # f(x) - f(x*) = 1/2 |A(x - x*)|^2 since A^T r* = 0
        d = x - x_star
        return 0.5 * float(d @ (AtA @ d))

    return ScalarProblem(
        dim=dim, value=value, gradient=gradient, inf_value=inf_value, minimizer=x_star,
        grad_lipschitz=float(np.linalg.norm(A, 2) ** 2), name="least_squares", gap_fn=gap,
    )


def _logsumexp(dim, params, rng) -> ScalarProblem:
    """f(x) = log sum_i exp(<a_i, x - c>) over the symmetric row set {+m_j, -m_j}."""
    _check_keys("logsumexp", params, {"rows", "center"})
    M = _matrix(params, "rows")
    if M is None:
        M = rng.standard_normal((max(dim, 2), dim))
    if M.shape[1] != dim:
        raise ProblemError(f"logsumexp rows have {M.shape[1]} columns, expected dim={dim}")
    center = _vector(params, "center", dim, rng.uniform(-1.0, 1.0, dim))
    A = np.vstack([M, -M])
    n_terms = A.shape[0]
    inf_value = float(np.log(n_terms))

    def value(x):
        z = A @ (x - center)
        zmax = z.max()
        return float(zmax + np.log(np.exp(z - zmax).sum()))

    def gradient(x):
        z = A @ (x - center)
        w = np.exp(z - z.max())
        return A.T @ (w / w.sum())

    def gap(x):
        z = A @ (x - center)
        zmax = z.max()
        if zmax < 1.0:
            # log(mean(exp z)) without cancellation near the minimizer
            return max(float(np.log1p(np.mean(np.expm1(z)))), 0.0)
        return max(float(zmax + np.log(np.mean(np.exp(z - zmax)))), 0.0)

    return ScalarProblem(
        dim=dim, value=value, gradient=gradient, inf_value=inf_value, minimizer=center.copy(),
        grad_lipschitz=float(np.linalg.norm(A, 2) ** 2), name="logsumexp", gap_fn=gap,
    )


def _huberized_norm(dim, params, rng) -> ScalarProblem:
    """Pseudo-Huber of the Euclidean norm: quadratic near the center, linear far away."""
    _check_keys("huberized_norm", params, {"delta", "center"})
    delta = float(params.get("delta", 1.0))
    if delta <= 0:
        raise ProblemError("huberized_norm delta must be positive")
    center = _vector(params, "center", dim, np.zeros(dim))

    def gap(x):
        r2 = float(np.dot(x - center, x - center))
        # delta*(sqrt(r2 + delta^2) - delta), rationalized
        return delta * r2 / (np.sqrt(r2 + delta * delta) + delta)

    def gradient(x):
        d = x - center
        return delta * d / np.sqrt(float(d @ d) + delta * delta)

    return ScalarProblem(
        dim=dim, value=gap, gradient=gradient, inf_value=0.0, minimizer=center.copy(),
        grad_lipschitz=1.0, name="huberized_norm", gap_fn=gap,
    )


_SCALAR_BUILDERS = {
    "quadratic": _quadratic,
    "least_squares": _least_squares,
    "logsumexp": _logsumexp,
    "huberized_norm": _huberized_norm,
}


def build_scalar_problem(catalog_id: str, dim: int, params: Optional[Mapping[str, Any]] = None,
                         seed: int = 0) -> ScalarProblem:
    """Instantiate a convex objective from the catalog.

    Parameters
    ----------
    catalog_id : str
        One of ``SCALAR_CATALOG``.
    dim : int
        Ambient dimension.
    params : mapping, optional
        Family parameters (e.g. ``spectrum`` for ``quadratic``). Entries that
        are omitted are drawn deterministically from ``seed``.
    seed : int
        Seed for the randomly generated defaults.
    """
    if catalog_id not in _SCALAR_BUILDERS:
        raise ProblemError(f"unknown scalar problem {catalog_id!r}; expected one of {SCALAR_CATALOG}")
    if int(dim) != dim or dim < 1:
        raise ProblemError(f"dim must be a positive integer, got {dim!r}")
    rng = np.random.default_rng(seed)
    return _SCALAR_BUILDERS[catalog_id](int(dim), dict(params or {}), rng)


def _rotation_matrix(dim: int, omega: float) -> np.ndarray:
    J = np.zeros((dim, dim))
    for k in range(0, dim, 2):
        J[k, k + 1] = omega
        J[k + 1, k] = -omega
    return J


def _linear_operator(M: np.ndarray, center: np.ndarray, name: str) -> OperatorProblem:
    def apply(z):
        return M @ (z - center)

    return OperatorProblem(dim=M.shape[0], apply=apply, lipschitz=float(np.linalg.norm(M, 2)),
                           zero=center.copy(), name=name)


def build_operator_problem(catalog_id: str, dim: int, params: Optional[Mapping[str, Any]] = None,
                           seed: int = 0) -> OperatorProblem:
    """Instantiate a (monotone, Lipschitz) vector field from the catalog.

    ``rotation`` is the planar field ``(z1, z2) -> omega * (z2, -z1)`` applied
    blockwise, ``bilinear_saddle`` is ``(x, y) -> (A y, -A^T x)``,
    ``affine_monotone`` is ``z -> (shift*I + S)(z - c)`` with ``S`` skew, and
    ``gradient_as_operator`` wraps a scalar catalog entry given under the
    ``objective`` parameter. ``negated_identity_for_tests`` is ``z -> -z`` and
    is deliberately not monotone.
    """
    if catalog_id not in OPERATOR_CATALOG:
        raise ProblemError(f"unknown operator problem {catalog_id!r}; expected one of {OPERATOR_CATALOG}")
    if int(dim) != dim or dim < 1:
        raise ProblemError(f"dim must be a positive integer, got {dim!r}")
    dim = int(dim)
    params = dict(params or {})
    rng = np.random.default_rng(seed)

    if catalog_id == "rotation":
        _check_keys(catalog_id, params, {"omega"})
        if dim % 2:
            raise ProblemError("rotation requires an even dimension")
        omega = float(params.get("omega", 1.0))
        if omega <= 0:
            raise ProblemError("rotation omega must be positive")
        return _linear_operator(_rotation_matrix(dim, omega), np.zeros(dim), "rotation")

    if catalog_id == "bilinear_saddle":
        _check_keys(catalog_id, params, {"A"})
        A = _matrix(params, "A")
        if A is None:
            if dim < 2:
                raise ProblemError("bilinear_saddle needs dim >= 2")
            A = rng.standard_normal((dim // 2, dim - dim // 2))
        n, m = A.shape
        if n + m != dim:
            raise ProblemError(f"bilinear_saddle A of shape {A.shape} needs dim={n + m}, got {dim}")
        M = np.block([[np.zeros((n, n)), A], [-A.T, np.zeros((m, m))]])
        return _linear_operator(M, np.zeros(dim), "bilinear_saddle")

    if catalog_id == "affine_monotone":
        _check_keys(catalog_id, params, {"shift", "skew", "center"})
        shift = float(params.get("shift", 1.0))
        if shift < 0:
            raise ProblemError("affine_monotone shift must be nonnegative")
        S = _matrix(params, "skew")
        if S is None:
            B = rng.standard_normal((dim, dim))
            S = B - B.T
        if S.shape != (dim, dim):
            raise ProblemError(f"affine_monotone skew must be {dim}x{dim}")
        if not np.allclose(S, -S.T):
            raise ProblemError("affine_monotone skew matrix is not skew-symmetric")
        center = _vector(params, "center", dim, np.zeros(dim))
        return _linear_operator(shift * np.eye(dim) + S, center, "affine_monotone")

    if catalog_id == "gradient_as_operator":
        _check_keys(catalog_id, params, {"objective"})
        inner = dict(params.get("objective") or {"id": "logsumexp"})
        if set(inner) - {"id", "params"} or "id" not in inner:
            raise ProblemError("gradient_as_operator objective must be {'id': ..., 'params': {...}}")
        f = build_scalar_problem(inner["id"], dim, inner.get("params"), seed)
        return OperatorProblem(dim=dim, apply=f.gradient, lipschitz=float(f.grad_lipschitz),
                               zero=None if f.minimizer is None else f.minimizer.copy(),
                               name=f"gradient_as_operator[{f.name}]")

    _check_keys(catalog_id, params, set())
    return OperatorProblem(dim=dim, apply=lambda z: -z, lipschitz=1.0, zero=np.zeros(dim),
                           name="negated_identity_for_tests")


def _sample_pairs(dim: int, samples: int, seed: int):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-SAMPLE_BOX, SAMPLE_BOX, (samples, dim))
    ys = rng.uniform(-SAMPLE_BOX, SAMPLE_BOX, (samples, dim))
    return xs, ys


def _worst_pair(field_fn, dim, samples, seed, tol) -> MonotonicityReport:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    xs, ys = _sample_pairs(dim, samples, seed)
    worst, witness = np.inf, (xs[0], ys[0])
    for x, y in zip(xs, ys):
        ip = float(np.dot(field_fn(y) - field_fn(x), y - x))
        if ip < worst:
            worst, witness = ip, (x.copy(), y.copy())
    return MonotonicityReport(passed=worst >= -tol, worst_inner_product=worst, witness=witness)


def check_monotone(problem: OperatorProblem, samples: int = 1000, seed: int = 0,
                   tol: float = 1e-10) -> MonotonicityReport:
    """Sample ``<V(y) - V(x), y - x>`` over random pairs in the cube and report the minimum."""
    return _worst_pair(problem.apply, problem.dim, samples, seed, tol)


def check_convexity(problem: ScalarProblem, samples: int = 1000, seed: int = 0,
                    tol: float = 1e-10) -> MonotonicityReport:
    """Gradient monotonicity (equivalent to convexity for C^1 functions) over random pairs."""
    return _worst_pair(problem.gradient, problem.dim, samples, seed, tol)
