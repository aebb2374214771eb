import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbrescale.problems import (
    OPERATOR_CATALOG,
    SCALAR_CATALOG,
    ProblemError,
    build_operator_problem,
    build_scalar_problem,
    check_convexity,
    check_monotone,
)

MONOTONE_OPERATORS = [c for c in OPERATOR_CATALOG if c != "negated_identity_for_tests"]


def test_quadratic_one_dimensional_values():
    f = build_scalar_problem("quadratic", 1, {"spectrum": [1.0]})
    x = np.array([2.0])
    assert f.value(x) == 2.0
    np.testing.assert_array_equal(f.gradient(x), [2.0])
    assert f.inf_value == 0.0
    np.testing.assert_array_equal(f.minimizer, [0.0])


def test_least_squares_identity_has_origin_minimizer():
    f = build_scalar_problem("least_squares", 2, {"A": np.eye(2), "b": [0.0, 0.0]})
    np.testing.assert_allclose(f.minimizer, 0.0, atol=1e-15)
    assert f.inf_value == 0.0


def test_logsumexp_seed_seven_convexity_many_pairs():
    f = build_scalar_problem("logsumexp", 2, seed=7)
    report = check_convexity(f, samples=10_000, seed=7, tol=1e-10)
    assert report.passed
    assert report.worst_inner_product >= -1e-10


@pytest.mark.parametrize("catalog_id", SCALAR_CATALOG)
@pytest.mark.parametrize("dim", [1, 2, 5])
def test_scalar_minimizer_invariants(catalog_id, dim):
    f = build_scalar_problem(catalog_id, dim, seed=3)
    assert abs(f.value(f.minimizer) - f.inf_value) <= 1e-12
    assert np.linalg.norm(f.gradient(f.minimizer)) <= 1e-10
    assert f.gap(f.minimizer) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("catalog_id", SCALAR_CATALOG)
def test_scalar_convexity_sampled(catalog_id):
    f = build_scalar_problem(catalog_id, 3, seed=1)
    assert check_convexity(f, samples=10_000, seed=2, tol=1e-10).passed


@pytest.mark.parametrize("catalog_id", SCALAR_CATALOG)
def test_gradient_matches_central_differences(catalog_id):
    f = build_scalar_problem(catalog_id, 3, seed=4)
    rng = np.random.default_rng(11)
    for x in rng.uniform(-5, 5, (100, 3)):
        h = 1e-5 * (1 + np.linalg.norm(x))
        fd = np.array([(f.value(x + h * e) - f.value(x - h * e)) / (2 * h) for e in np.eye(3)])
        g = f.gradient(x)
        assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1.0)


@pytest.mark.parametrize("catalog_id", SCALAR_CATALOG)
def test_gradient_lipschitz_bound(catalog_id):
    f = build_scalar_problem(catalog_id, 3, seed=5)
    rng = np.random.default_rng(0)
    for x, y in zip(rng.uniform(-5, 5, (500, 3)), rng.uniform(-5, 5, (500, 3))):
        lhs = np.linalg.norm(f.gradient(y) - f.gradient(x))
        assert lhs <= f.grad_lipschitz * np.linalg.norm(y - x) * (1 + 1e-8)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_gap_nonnegative_and_consistent(point):
    x = np.array(point)
    for catalog_id in SCALAR_CATALOG:
        f = build_scalar_problem(catalog_id, 2, seed=0)
        gap = f.gap(x)
        assert gap >= 0.0
        assert gap == pytest.approx(f.value(x) - f.inf_value, rel=1e-9, abs=1e-12)


def test_logsumexp_gap_resolves_tiny_displacements():
    f = build_scalar_problem("logsumexp", 2, seed=0)
    d = np.array([1e-9, -2e-9])
    gap = f.gap(f.minimizer + d)
    # second-order expansion with the Hessian of the symmetric row set at the center
    assert gap > 0
    assert gap == pytest.approx(0.5 * d @ (f.gradient(f.minimizer + d) - f.gradient(f.minimizer)), rel=1e-4)


def test_scalar_builders_are_deterministic():
    a = build_scalar_problem("least_squares", 3, seed=9)
    b = build_scalar_problem("least_squares", 3, seed=9)
    x = np.array([0.3, -1.0, 2.0])
    assert a.value(x) == b.value(x)
    np.testing.assert_array_equal(a.minimizer, b.minimizer)


def test_scalar_errors():
    with pytest.raises(ProblemError):
        build_scalar_problem("rosenbrock", 2)
    with pytest.raises(ProblemError):
        build_scalar_problem("quadratic", 2, {"spectrum": [1.0, -0.5]})
    with pytest.raises(ProblemError):
        build_scalar_problem("quadratic", 3, {"spectrum": [1.0, 0.5]})
    with pytest.raises(ProblemError):
        build_scalar_problem("least_squares", 2, {"A": np.ones((4, 3))})
    with pytest.raises(ProblemError):
        build_scalar_problem("quadratic", 2, {"curvature": 1.0})


def test_rotation_field():
    V = build_operator_problem("rotation", 2)
    np.testing.assert_array_equal(V.apply(np.array([1.0, 0.0])), [0.0, -1.0])
    rng = np.random.default_rng(0)
    for z in rng.normal(size=(50, 2)):
        assert abs(V.apply(z) @ z) <= 1e-15
    report = check_monotone(V, samples=1000, seed=0, tol=1e-12)
    assert report.passed
    assert report.worst_inner_product == pytest.approx(0.0, abs=1e-12)


def test_bilinear_saddle_scalar_coupling():
    V = build_operator_problem("bilinear_saddle", 2, {"A": [[1.0]]})
    np.testing.assert_array_equal(V.apply(np.array([2.0, 3.0])), [3.0, -2.0])
    np.testing.assert_array_equal(V.zero, [0.0, 0.0])


@pytest.mark.parametrize("catalog_id", MONOTONE_OPERATORS)
def test_operator_invariants(catalog_id):
    V = build_operator_problem(catalog_id, 4, seed=2)
    assert np.linalg.norm(V.apply(V.zero)) <= 1e-12
    assert check_monotone(V, samples=10_000, seed=1, tol=1e-10).passed
    rng = np.random.default_rng(3)
    for x, y in zip(rng.uniform(-5, 5, (500, 4)), rng.uniform(-5, 5, (500, 4))):
        assert np.linalg.norm(V.apply(y) - V.apply(x)) <= V.lipschitz * np.linalg.norm(y - x) * (1 + 1e-8)


def test_negated_identity_fails_monotonicity():
    V = build_operator_problem("negated_identity_for_tests", 2)
    report = check_monotone(V, samples=100, seed=0)
    assert not report.passed
    x, y = report.witness
    assert (V.apply(y) - V.apply(x)) @ (y - x) == pytest.approx(report.worst_inner_product)
    assert report.worst_inner_product < 0


def test_gradient_as_operator_wraps_objective():
    V = build_operator_problem("gradient_as_operator", 2, {"objective": {"id": "quadratic",
                                                                          "params": {"spectrum": [2.0, 1.0]}}})
    np.testing.assert_allclose(V.apply(np.array([1.0, 1.0])), [2.0, 1.0])
    assert check_monotone(build_operator_problem("gradient_as_operator", 3, seed=4)).passed


def test_monotone_check_is_deterministic():
    V = build_operator_problem("affine_monotone", 3, seed=5)
    a = check_monotone(V, samples=200, seed=8)
    b = check_monotone(V, samples=200, seed=8)
    assert a.worst_inner_product == b.worst_inner_product


def test_operator_errors():
    with pytest.raises(ProblemError):
        build_operator_problem("rotation", 3)
    with pytest.raises(ProblemError):
        build_operator_problem("spiral", 2)
    with pytest.raises(ProblemError):
        build_operator_problem("bilinear_saddle", 3, {"A": [[1.0]]})
    with pytest.raises(ProblemError):
        build_operator_problem("affine_monotone", 2, {"skew": [[0.0, 1.0], [1.0, 0.0]]})
    with pytest.raises(ProblemError):
        build_operator_problem("gradient_as_operator", 2, {"objective": {"params": {}}})
    with pytest.raises(ValueError):
        check_monotone(build_operator_problem("rotation", 2), samples=0)
