"""EM for a Gaussian mixture of linear regressions with a k-means style prior.

Component ``i`` scores point ``j`` with
``log pi_i - log(2 pi sigma_i^2) / 2 - (r_ji^2 + gamma ||x_j - mu_i||^2) / (2 sigma_i^2)``.
With ``gamma = 0`` the tracked log-likelihood is exactly that of the mixture
``sum_i pi_i N(x w_i + b_i, sigma_i^2)``. Coefficient penalties of the
configured regressor enter as a MAP term ``-penalty(w_i) / (2 sigma_i^2)``.
The solver's fixed ridge jitter is a numerical stabiliser, not part of that
prior: it shapes the coefficient solve but not the variances or likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .base_regressors import LinearModel, RegressorSpec, fit_linear
from .errors import DegenerateColumn, InsufficientData
from .hard_clr import (
    ClusterwiseModel,
    HardClrConfig,
    Partition,
    _as_dataset,
    criterion_matrix,
    initial_partition,
)

DEGENERATE_MASS = 1e-12
VARIANCE_FLOOR_REL = 1e-8
VARIANCE_FLOOR_ABS = 1e-12


@dataclass(frozen=True)
class MixtureParams:
    pi: np.ndarray
    mu: np.ndarray
    models: list
    sigma2: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to one")
        if np.any(np.asarray(self.sigma2) <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "mu", np.atleast_2d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    def permuted(self, order) -> "MixtureParams":
        order = list(order)
        return MixtureParams(self.pi[order], self.mu[order], [self.models[i] for i in order], self.sigma2[order])


@dataclass
class SoftAssignment:
    q: np.ndarray
    loglik_history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 2:
            raise ValueError("responsibilities must be an (n, k) matrix")
        self.q = q


def variance_floor(y) -> float:
    return max(VARIANCE_FLOOR_REL * float(np.var(y)), VARIANCE_FLOOR_ABS)


def _log_scores(ds, params: MixtureParams, gamma):
    crit = criterion_matrix(ds.X, ds.y, params.models, params.mu, gamma)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    return log_pi - 0.5 * np.log(2 * np.pi * params.sigma2) - crit / (2 * params.sigma2)


def _prior(regressor: RegressorSpec | None, w) -> float:
    if regressor is None:
        return 0.0
    return replace(regressor, jitter=0.0).penalty(w)


def _map_penalty(params: MixtureParams, regressor: RegressorSpec | None) -> float:
    return sum(_prior(regressor, m.w) / (2 * s2) for m, s2 in zip(params.models, params.sigma2))


def log_likelihood(dataset, params: MixtureParams, gamma, regressor: RegressorSpec | None = None) -> float:
    """Gamma-augmented mixture log-likelihood, minus the MAP coefficient
    penalty when ``regressor`` is given."""
    ds = _as_dataset(dataset)
    ll = float(logsumexp(_log_scores(ds, params, gamma), axis=1).sum())
    return ll - _map_penalty(params, regressor)


def e_step(dataset, params: MixtureParams, gamma) -> SoftAssignment:
    ds = _as_dataset(dataset)
    s = _log_scores(ds, params, gamma)
    return SoftAssignment(np.exp(s - logsumexp(s, axis=1, keepdims=True)))


def _fit_cost(ds, weights, model, regressor):
    resid = ds.y - ds.X @ model.w - model.b
    return float(weights @ resid ** 2) + _prior(regressor, model.w)


def m_step(dataset, q, gamma, regressor: RegressorSpec | None = None,
           warm: MixtureParams | None = None, keep: MixtureParams | None = None) -> MixtureParams:
    """Closed-form mixture updates; the regression uses ``q[:, i]`` as sample
    weights and the variance absorbs the coefficient penalty.

    ``warm`` holds the previous parameters: lasso solves start from them and
    a component keeps its previous coefficients when the new solve does not
    lower its weighted squared error plus prior.

    Raises DegenerateColumn when a component has (numerically) no mass,
    unless ``keep`` is given: such components then keep their regression,
    centroid and variance from ``keep`` (a partial, still ascending, update).
    """
    ds = _as_dataset(dataset)
    regressor = regressor or RegressorSpec()
    q = q.q if isinstance(q, SoftAssignment) else np.asarray(q, dtype=float)
    mass = q.sum(axis=0)
    bad = mass < DEGENERATE_MASS
    if bad.any() and keep is None:
        raise DegenerateColumn(f"components {np.flatnonzero(bad).tolist()} have no responsibility mass")
    k = q.shape[1]
    pi = mass / mass.sum()
    floor = variance_floor(ds.y)
    mu, models, sigma2 = np.empty((k, ds.d)), [], np.empty(k)
    for i in range(k):
        if bad[i]:
            mu[i], sigma2[i] = keep.mu[i], keep.sigma2[i]
            models.append(keep.models[i])
            continue
        mu[i] = q[:, i] @ ds.X / mass[i]
        start = warm.models[i] if warm is not None and regressor.kind == "lasso" else None
        model = fit_linear(ds.X, ds.y, q[:, i], regressor, warm_start=start)
        fit_cost = _fit_cost(ds, q[:, i], model, regressor)
        if warm is not None and _fit_cost(ds, q[:, i], warm.models[i], regressor) < fit_cost:
            # the jittered solve is not the exact optimum of the jitter-free
            # objective; never accept a step that makes it worse
            model = warm.models[i]
            fit_cost = _fit_cost(ds, q[:, i], model, regressor)
        dist = ((ds.X - mu[i]) ** 2).sum(axis=1)
        spread = fit_cost + gamma * float(q[:, i] @ dist)
        sigma2[i] = max(spread / mass[i], floor)
        models.append(model)
    return MixtureParams(pi, mu, models, sigma2)


def harden(q) -> Partition:
    q = q.q if isinstance(q, SoftAssignment) else np.asarray(q, dtype=float)
    return Partition(np.argmax(q, axis=1), q.shape[1])


def _reseed(q, scores, bad):
    # Hand each massless component the worst-explained point that is not
    # already claimed by another re-seed.
    point_ll = logsumexp(scores, axis=1)
    order = np.argsort(point_ll, kind="stable")
    q = q.copy()
    for comp, j in zip(bad, order):
        q[j] = 0.0
        q[j, comp] = 1.0
    return q


def fit_soft_clr(dataset, config: HardClrConfig, callback=None, tol: float = 1e-7):
    """Run EM from a seeded random hard partition.

    Returns ``(params, assignment)``; ``assignment.loglik_history`` holds the
    penalised log-likelihood after every M-step.
    """
    ds = _as_dataset(dataset)
    k, gamma, spec = config.k, config.gamma, config.regressor
    if ds.n < k:
        raise InsufficientData(f"need at least k={k} rows, got {ds.n}")
    rng = np.random.default_rng(config.seed)
    labels = initial_partition(ds.n, k, rng)
    q = np.eye(k)[labels]
    params = m_step(ds, q, gamma, spec)
    history = [log_likelihood(ds, params, gamma, spec)]
    if callback is not None:
        callback(0, params, history[-1])

    converged = False
    n_iter = 0
    for it in range(1, config.max_iter + 1):
        scores = _log_scores(ds, params, gamma)
        q = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
        bad = np.flatnonzero(q.sum(axis=0) < DEGENERATE_MASS)
        if bad.size:
            # Try re-seeding the massless components; if that lowers the
            # objective, fall back to updating the others only.
            trial = m_step(ds, _reseed(q, scores, bad), gamma, spec, warm=params)
            ll = log_likelihood(ds, trial, gamma, spec)
            if ll < history[-1]:
                trial = m_step(ds, q, gamma, spec, warm=params, keep=params)
                ll = log_likelihood(ds, trial, gamma, spec)
            params = trial
        else:
            params = m_step(ds, q, gamma, spec, warm=params)
            ll = log_likelihood(ds, params, gamma, spec)
        history.append(ll)
        n_iter = it
        if callback is not None:
            callback(it, params, history[-1])
        if abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    q = e_step(ds, params, gamma).q
    return params, SoftAssignment(q, history, n_iter, converged)


def to_clusterwise(dataset, params: MixtureParams, assignment: SoftAssignment,
                   config: HardClrConfig) -> ClusterwiseModel:
    """Harden the responsibilities and refit one model per non-empty cluster.

    Components that receive no points keep their mixture coefficients and
    mean, with size zero.
    """
    ds = _as_dataset(dataset)
    labels = harden(assignment).labels
    k = params.k
    models, centroids = [], np.empty((k, ds.d))
    for i in range(k):
        idx = labels == i
        if np.any(idx):
            models.append(fit_linear(ds.X[idx], ds.y[idx], spec=config.regressor))
            centroids[i] = ds.X[idx].mean(axis=0)
        else:
            models.append(LinearModel(params.models[i].w, params.models[i].b))
            centroids[i] = params.mu[i]
    return ClusterwiseModel(
        models=models,
        centroids=centroids,
        sizes=np.bincount(labels, minlength=k),
        config=config,
        labels=labels,
        objective_history=list(assignment.loglik_history),
        n_iter=assignment.n_iter,
        converged=assignment.converged,
    )
