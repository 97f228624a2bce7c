import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stackderm.errors import ConfigError
from stackderm.svm import (KernelParams, decision_function, decision_function_standardized,
                           fit_smo, kernel_eval, kernel_matrix, smo_solve)

from oracles import dual_qp

LINEAR = KernelParams("linear")


def kkt_violation(K, y, alpha, bias, C):
    """Largest violation of the KKT conditions in units of y f(x) - 1."""
    m = y * (K @ (alpha * y) + bias)
    eps = 1e-12
    at0 = alpha <= eps
    atC = alpha >= C - eps
    free = ~(at0 | atC)
    v = np.zeros_like(m)
    v[at0] = np.maximum(0, 1 - m[at0])
    v[atC] = np.maximum(0, m[atC] - 1)
    v[free] = np.abs(m[free] - 1)
    return v.max()


def random_problem(rng, n_max=20):
    n = int(rng.integers(2, n_max + 1))
    d = int(rng.integers(1, 5))
    x = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y[0], y[1] = -1.0, 1.0  # both classes present
    kind = ["rbf", "poly", "linear"][int(rng.integers(3))]
    kernel = KernelParams(kind, gamma=float(rng.uniform(0.1, 1.0)),
                          degree=int(rng.integers(1, 4)), coef0=float(rng.uniform(0, 1)))
    C = float(10 ** rng.uniform(-1, 1.5))
    return x, y, kernel, C


# -- kernels ----------------------------------------------------------------------

def test_kernel_examples():
    x = np.array([1.0, 2.0, 3.0])
    assert kernel_eval(x, x, KernelParams("rbf", gamma=0.3)) == 1.0
    poly = KernelParams("poly", gamma=0.0009, degree=3, coef0=0.0)
    assert kernel_eval(np.array([1000.0]), np.array([1.0]), poly) == pytest.approx(0.729, abs=1e-12)
    rbf = KernelParams("rbf", gamma=0.0009)
    z = np.array([np.sqrt(1000.0), 0.0])
    assert kernel_eval(z, np.zeros(2), rbf) == pytest.approx(np.exp(-0.9), abs=1e-12)
    assert np.exp(-0.9) == pytest.approx(0.40657, abs=1e-5)


vec = arrays(np.float64, 3, elements=st.floats(-10, 10))


@given(vec, vec, st.sampled_from(["rbf", "poly", "linear"]))
def test_kernel_symmetry(x, z, kind):
    k = KernelParams(kind, gamma=0.2, degree=3, coef0=1.0)
    assert kernel_eval(x, z, k) == kernel_eval(z, x, k)


def test_kernel_matrix_matches_eval(rng):
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
    for kind in ("rbf", "poly", "linear"):
        k = KernelParams(kind, gamma=0.4, degree=2, coef0=0.5)
        ref = np.array([[kernel_eval(p, q, k) for q in b] for p in a])
        np.testing.assert_allclose(kernel_matrix(a, b, k), ref, rtol=1e-12)


def test_kernel_params_validation():
    with pytest.raises(ConfigError):
        KernelParams("sigmoid")
    with pytest.raises(ConfigError):
        KernelParams("rbf", gamma=0.0)
    with pytest.raises(ConfigError):
        kernel_eval(np.ones(2), np.ones(3), LINEAR)


# -- fitting ----------------------------------------------------------------------

def test_two_point_problem():
    x = np.array([[-1.0], [1.0]])
    y = np.array([-1, 1])
    m = fit_smo(x, y, 1e3, LINEAR, standardize=False)
    assert len(m.support_vectors) == 2
    assert abs(m.dual_coefs[0]) == pytest.approx(abs(m.dual_coefs[1]))
    assert decision_function(m, np.array([0.0])) == pytest.approx(0.0, abs=1e-12)
    assert decision_function(m, np.array([1.0])) == pytest.approx(1.0, abs=1e-9)


def test_duplicated_dataset_same_decision(rng):
    x = rng.standard_normal((12, 2))
    y = np.where(x[:, 0] + x[:, 1] > 0, 1, -1)
    x += 0.5 * y[:, None]
    k = KernelParams("rbf", gamma=0.5)
    a = fit_smo(x, y, 1e3, k, tol=1e-9, standardize=False)
    b = fit_smo(np.vstack([x, x]), np.r_[y, y], 1e3, k, tol=1e-9, standardize=False)
    z = rng.standard_normal((30, 2))
    np.testing.assert_allclose(decision_function(a, z), decision_function(b, z), atol=1e-6)


def test_separable_set_matches_oracle(rng):
    x = rng.standard_normal((20, 2))
    y = np.where(x[:, 0] - x[:, 1] > 0, 1.0, -1.0)
    x += 0.4 * y[:, None]
    K = kernel_matrix(x, x, LINEAR)
    alpha, b = dual_qp(K, y, 100.0)
    m = fit_smo(x, y, 100.0, LINEAR, tol=1e-8, standardize=False)
    z = rng.standard_normal((25, 2))
    ref = kernel_matrix(z, x, LINEAR) @ (alpha * y) + b
    np.testing.assert_allclose(decision_function(m, z), ref, atol=1e-4)


def test_support_vector_sign_matches_label(rng):
    x = rng.standard_normal((30, 3))
    y = np.where(x[:, 2] > 0, 1, -1)
    x[:, 2] += 0.5 * y
    m = fit_smo(x, y, 10.0, KernelParams("rbf", gamma=0.3), tol=1e-6, standardize=False)
    sv_labels = np.sign(m.dual_coefs)
    assert np.all(np.sign(decision_function(m, m.support_vectors)) == sv_labels)


def test_dual_feasibility(rng):
    for _ in range(20):
        x, y, kernel, C = random_problem(rng, 40)
        m = fit_smo(x, y, C, kernel)
        assert abs(m.dual_coefs.sum()) <= 1e-8
        alpha = np.abs(m.dual_coefs)
        assert np.all(alpha > 0) and np.all(alpha <= C)


def test_kkt_holds_at_default_tol(rng):
    for _ in range(50):
        x, y, kernel, C = random_problem(rng, 40)
        K = kernel_matrix(x, x, kernel)
        alpha, b, conv, _ = smo_solve(K, y, C, tol=1e-3)
        assert conv
        assert kkt_violation(K, y, alpha, b, C) <= 1e-3


def test_standardization_composes(rng):
    x = rng.standard_normal((40, 3)) * [1.0, 50.0, 0.01] + [0.0, 100.0, 5.0]
    y = np.where(x[:, 0] > 0, 1, -1)
    m = fit_smo(x, y, 1.0, KernelParams("rbf", gamma=0.5))
    z = rng.standard_normal((10, 3)) * [1.0, 50.0, 0.01] + [0.0, 100.0, 5.0]
    direct = decision_function(m, z)
    manual = decision_function_standardized(m, (z - m.feature_means) / m.feature_stds)
    np.testing.assert_array_equal(direct, manual)


def test_zero_one_labels_accepted(rng):
    x = rng.standard_normal((20, 2))
    y01 = (x[:, 0] > 0).astype(int)
    a = fit_smo(x, y01, 1.0, LINEAR)
    b = fit_smo(x, 2 * y01 - 1, 1.0, LINEAR)
    np.testing.assert_array_equal(a.dual_coefs, b.dual_coefs)


def test_deterministic_support_set(rng):
    x = rng.standard_normal((50, 4))
    y = np.where(x[:, 0] + rng.standard_normal(50) > 0, 1, -1)
    a = fit_smo(x, y, 0.5, KernelParams("rbf", gamma=0.2))
    b = fit_smo(x, y, 0.5, KernelParams("rbf", gamma=0.2))
    assert a.support_vectors.tobytes() == b.support_vectors.tobytes()
    assert a.dual_coefs.tobytes() == b.dual_coefs.tobytes()


def test_single_class_rejected():
    with pytest.raises(ConfigError):
        fit_smo(np.ones((3, 2)), np.ones(3), 1.0, LINEAR)


def test_dimension_mismatch(rng):
    m = fit_smo(rng.standard_normal((6, 2)), np.array([1, -1, 1, -1, 1, -1]), 1.0, LINEAR)
    with pytest.raises(ConfigError):
        decision_function(m, np.ones((2, 3)))


def test_non_convergence_warns(rng):
    x = rng.standard_normal((40, 2))
    y = np.where(rng.random(40) < 0.5, 1, -1)
    with pytest.warns(RuntimeWarning, match="without reaching"):
        m = fit_smo(x, y, 1.0, KernelParams("rbf", gamma=1.0), max_iter=2)
    assert not m.converged
    assert m.n_iter == 2
