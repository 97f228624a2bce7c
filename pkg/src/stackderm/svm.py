"""Binary soft-margin SVM trained with sequential minimal optimization.

The solver works on the dual

    min_a  1/2 a'Qa - sum(a)   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K_ij

and picks each working pair with the maximal-violating-pair / second-order
rule, so no randomness is involved. It stops once the KKT gap
``max_{I_up} -y_t G_t - min_{I_low} -y_t G_t`` drops to ``tol``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TAU = 1e-12


@dataclass(frozen=True)
class KernelParams:
    kind: str = "rbf"  # "rbf", "poly" or "linear"
    gamma: float = 1.0
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rbf", "poly", "linear"):
            raise ConfigError(f"unknown kernel {self.kind!r}")
        if self.kind != "linear" and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.kind == "poly" and self.degree < 1:
            raise ConfigError("polynomial degree must be >= 1")


# meta-learner and polynomial baseline settings
META_KERNEL = KernelParams("rbf", gamma=0.0009, degree=2)
META_C = 0.02
# With C=0.02 and gamma=0.0009 the converged decision values of the meta
# problem span only ~1e-5, so the default KKT tolerance of 1e-3 would stop
# SMO long before the ranking of the scores settles.
META_TOL = 1e-8
BASELINE_KERNEL = KernelParams("poly", gamma=0.0009, degree=3, coef0=0.0)
BASELINE_C = 0.07


def kernel_eval(x, z, params: KernelParams) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ConfigError(f"kernel inputs differ in shape: {x.shape} vs {z.shape}")
    if params.kind == "rbf":
        d = x - z
        return float(np.exp(-params.gamma * np.dot(d, d)))
    dot = float(np.dot(x, z))
    if params.kind == "poly":
        return (params.gamma * dot + params.coef0) ** params.degree
    return dot


def kernel_matrix(A, B, params: KernelParams):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    dots = A @ B.T
    if params.kind == "rbf":
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * dots
        return np.exp(-params.gamma * np.maximum(sq, 0.0))
    if params.kind == "poly":
        return (params.gamma * dots + params.coef0) ** params.degree
    return dots


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized inputs with a_i > 0
    dual_coefs: np.ndarray  # a_i * y_i
    bias: float
    kernel: KernelParams
    C: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    converged: bool = True
    n_iter: int = 0

    @property
    def n_features(self):
        return self.feature_means.size

    def standardize(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ConfigError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return (X - self.feature_means) / self.feature_stds


def decision_function_standardized(model: SvmModel, Z):
    """Scores for inputs that are already standardized."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != model.n_features:
        raise ConfigError(f"model expects {model.n_features} features, got {Z.shape[1]}")
    if model.dual_coefs.size == 0:
        return np.full(len(Z), model.bias)
    return kernel_matrix(Z, model.support_vectors, model.kernel) @ model.dual_coefs + model.bias


def decision_function(model: SvmModel, X):
    """``sum_i a_i y_i K(s_i, x) + b`` for each row of ``X`` (raw features)."""
    scalar = np.ndim(X) == 1
    out = decision_function_standardized(model, model.standardize(X))
    return float(out[0]) if scalar else out


def _bias(alpha, G, y, C):
    yG = y * G
    at_ub = alpha >= C
    at_lb = alpha <= 0
    free = ~(at_ub | at_lb)
    if free.any():
        rho = yG[free].mean()
    else:
        up = (at_ub & (y < 0)) | (at_lb & (y > 0))
        lo = (at_ub & (y > 0)) | (at_lb & (y < 0))
        ub = yG[up].min() if up.any() else np.inf
        lb = yG[lo].max() if lo.any() else -np.inf
        rho = (ub + lb) / 2
    return -float(rho)


def smo_solve(K, y, C, tol=1e-3, max_iter=1_000_000):
    """Solve the dual for a precomputed kernel matrix.

    Returns ``(alpha, bias, converged, n_iter)``.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.diag(K).copy()
    converged = False
    it = 0
    while it < max_iter:
        v = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            converged = True
            break
        vu = np.where(up, v, -np.inf)
        i = int(np.argmax(vu))
        m = vu[i]
        vl = np.where(low, v, np.inf)
        if m - vl.min() <= tol:
            converged = True
            break
        b = m - v
        cand = low & (b > 0)
        a = QD[i] + QD - 2 * K[i]
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        it += 1

        Kij = K[i, j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] - 2 * Kij, TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2 * Kij, TAU)
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > C:
                if ni > C:
                    ni, nj = C, s - C
            elif nj < 0:
                nj, ni = 0.0, s
            if s > C:
                if nj > C:
                    nj, ni = C, s - C
            elif ni < 0:
                ni, nj = 0.0, s
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        G += y * (y[i] * dai * K[i] + y[j] * daj * K[j])
    return alpha, _bias(alpha, G, y, C), converged, it


def fit_smo(X, y, C, kernel: KernelParams, tol=1e-3, max_iter=1_000_000,
            standardize=True) -> SvmModel:
    """Fit on raw features ``X`` and labels in {-1, +1} (0/1 is accepted too).

    Features are standardized with the training means and stds (constant
    features keep std 1) unless ``standardize`` is False.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if set(np.unique(y)) <= {0.0, 1.0}:
        y = 2 * y - 1
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ConfigError("labels must be in {-1, +1}")
    if len(X) != len(y):
        raise ConfigError("X and y differ in length")
    if (y > 0).all() or (y < 0).all():
        raise ConfigError("SVM training needs examples of both classes")
    if not C > 0:
        raise ConfigError("C must be positive")
    if standardize:
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        stds = np.where(stds > 0, stds, 1.0)
    else:
        means = np.zeros(X.shape[1])
        stds = np.ones(X.shape[1])
    Z = (X - means) / stds
    K = kernel_matrix(Z, Z, kernel)
    alpha, bias, converged, it = smo_solve(K, y, C, tol, max_iter)
    if not converged:
        warnings.warn(f"SMO stopped after {it} iterations without reaching tol={tol}",
                      RuntimeWarning, stacklevel=2)
    sv = alpha > 0
    return SvmModel(Z[sv], (alpha * y)[sv], bias, kernel, float(C), means, stds,
                    converged=converged, n_iter=it)
