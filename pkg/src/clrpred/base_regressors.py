"""Weighted linear solvers (OLS, ridge, lasso) and regression metrics.

Conventions, in units of the weighted sum of squared errors (SSE):

* ``ols``   minimises ``SSE + jitter * ||w||^2``
* ``ridge`` minimises ``SSE + (lam + jitter) * ||w||^2``
* ``lasso`` minimises ``SSE / 2 + lam * ||w||_1 + jitter / 2 * ||w||^2``

The intercept is never penalised. ``jitter`` is a small fixed stabiliser so
that clusters with fewer rows than features still have a unique solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg

from .errors import DimensionMismatch, SingularSystem, ZeroVariance

DEFAULT_JITTER = 1e-5
REGRESSOR_KINDS = ("ols", "ridge", "lasso")


@dataclass(frozen=True)
class LinearModel:
    """Affine predictor ``x @ w + b``."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if w.size == 0 or not np.all(np.isfinite(w)) or not np.isfinite(self.b):
            raise ValueError("LinearModel coefficients must be finite and non-empty")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def d(self) -> int:
        return self.w.shape[0]

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "ols"
    lam: float = 0.0
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise ValueError(f"unknown regressor kind {self.kind!r}")
        if self.lam < 0 or self.jitter < 0:
            raise ValueError("regularisation strengths must be non-negative")

    def penalty(self, w) -> float:
        """Penalty of coefficient vector ``w`` in SSE units."""
        w = np.asarray(w, dtype=float)
        l2 = self.jitter
        if self.kind == "ridge":
            l2 += self.lam
        pen = l2 * float(w @ w)
        if self.kind == "lasso":
            pen += 2.0 * self.lam * float(np.abs(w).sum())
        return pen


@dataclass
class Dataset:
    """Feature matrix, target and optional constraint tokens.

    ``scale_features`` records whether the preprocessing recipe asks for
    [-1, 1] scaling; scaling itself is fitted per training fold.
    """

    X: np.ndarray
    y: np.ndarray
    constraint_ids: np.ndarray | None = None
    feature_names: list = field(default_factory=list)
    scale_features: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionMismatch(f"X must be a non-empty 2-D matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("Dataset contains NaN or infinite values")
        if self.constraint_ids is not None:
            ids = np.asarray(self.constraint_ids).astype(str)
            if ids.shape != (X.shape[0],):
                raise DimensionMismatch("constraint_ids must have one token per row")
            self.constraint_ids = ids
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(X.shape[1])]
        elif len(self.feature_names) != X.shape[1]:
            raise DimensionMismatch("feature_names length does not match X")
        self.X, self.y = X, y

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        ids = None if self.constraint_ids is None else self.constraint_ids[idx]
        return Dataset(self.X[idx], self.y[idx], ids, list(self.feature_names), self.scale_features)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-D, got {X.ndim}-D")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    return X, y


@njit(cache=True)
def _lasso_cd(G, c, lam, w, max_sweeps, tol):
    # Minimises 0.5 w'Gw - c'w + lam |w|_1 in place; returns sweeps used.
    d = c.shape[0]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(d):
            gjj = G[j, j]
            if gjj <= 0.0:
                w[j] = 0.0
                continue
            rho = c[j] - G[j] @ w + gjj * w[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            delta = abs(new - w[j])
            if delta > max_delta:
                max_delta = delta
            w[j] = new
        if max_delta < tol:
            return sweep + 1
    return max_sweeps


def _spd_solve(A, rhs):
    try:
        factor = linalg.cho_factor(A, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem("normal equations are not positive definite") from exc
    # squared Cholesky diagonal = pivots of the elimination
    pivots = np.diag(factor[0]) ** 2
    if pivots.min() <= 1e-12 * pivots.max():
        raise SingularSystem("normal equations are numerically rank deficient")
    return linalg.cho_solve(factor, rhs, check_finite=False)


def fit_linear(X, y, sample_weights=None, spec: RegressorSpec | None = None,
               warm_start: LinearModel | None = None, max_sweeps: int = 1000,
               tol: float = 1e-7) -> LinearModel:
    """Fit a weighted OLS / ridge / lasso model with an unpenalised intercept.

    Parameters
    ----------
    X : (n, d) array
    y : (n,) array
    sample_weights : (n,) array of non-negative weights, default all ones
    spec : RegressorSpec, default plain OLS with the stabilising jitter
    warm_start : LinearModel, optional
        Starting coefficients for the lasso coordinate descent. Descent
        never increases the objective, so a warm start guarantees the
        result is at least as good as the starting point.

    Raises
    ------
    DimensionMismatch, SingularSystem
    """
    spec = spec or RegressorSpec()
    X, y = _check_xy(X, y)
    n, d = X.shape
    if n == 0 or d == 0:
        raise DimensionMismatch("X must have at least one row and one column")
    if sample_weights is None:
        sw = np.ones(n)
    else:
        sw = np.asarray(sample_weights, dtype=float).reshape(-1)
        if sw.shape[0] != n:
            raise DimensionMismatch("sample_weights length does not match X")
        if np.any(sw < 0) or not np.all(np.isfinite(sw)):
            raise ValueError("sample weights must be finite and non-negative")
    total = sw.sum()
    if total <= 0:
        raise ValueError("at least one sample weight must be positive")

    x_mean = sw @ X / total
    y_mean = sw @ y / total
    Xc = X - x_mean
    yc = y - y_mean
    Xw = Xc * sw[:, None]
    G = Xc.T @ Xw
    c = Xw.T @ yc

    if spec.kind == "lasso" and spec.lam > 0:
        G = G + spec.jitter * np.eye(d)
        w = np.zeros(d) if warm_start is None else np.array(warm_start.w, dtype=float)
        if w.shape != (d,):
            raise DimensionMismatch("warm start dimension does not match X")
        _lasso_cd(G, c, float(spec.lam), w, int(max_sweeps), float(tol))
    else:
        l2 = spec.jitter + (spec.lam if spec.kind == "ridge" else 0.0)
        w = _spd_solve(G + l2 * np.eye(d), c)
    return LinearModel(w, float(y_mean - x_mean @ w))


def predict_linear(model: LinearModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DimensionMismatch(f"model expects {model.d} features, got shape {X.shape}")
    return X @ model.w + model.b


def _check_pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise DimensionMismatch(f"length mismatch: {y_true.size} vs {y_pred.size}")
    return y_true, y_pred


def mse(y_true, y_pred) -> float:
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float(np.mean((y_true - y_pred) ** 2))


def r2(y_true, y_pred) -> float:
    """Coefficient of determination; negative when worse than the mean."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0.0:
        raise ZeroVariance("r2 is undefined for a constant target")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / sst
