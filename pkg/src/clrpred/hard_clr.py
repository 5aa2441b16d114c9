"""Hard clusterwise linear regression with k-means regularisation.

The fit alternates a regression step (one weighted linear fit per cluster)
and a labeling step that moves every point, or every constraint group, to
the cluster minimising ``residual^2 + gamma * ||x - centroid||^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .base_regressors import Dataset, LinearModel, RegressorSpec, fit_linear
from .errors import DimensionMismatch, EmptyGroup, InsufficientData

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HardClrConfig:
    k: int = 2
    gamma: float = 0.0
    max_iter: int = 5
    seed: int = 0
    regressor: RegressorSpec = field(default_factory=RegressorSpec)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class Partition:
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    @property
    def empty(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.sizes == 0)]


class ConstraintSet:
    """Disjoint groups covering every row, built from per-row tokens."""

    def __init__(self, group_index, tokens):
        self.group_index = np.asarray(group_index, dtype=np.int64).reshape(-1)
        self.tokens = [str(t) for t in tokens]
        self.group_of = {t: i for i, t in enumerate(self.tokens)}
        if len(self.group_of) != len(self.tokens):
            raise ValueError("constraint tokens must be unique")
        if self.group_index.size and (
            self.group_index.min() < 0 or self.group_index.max() >= len(self.tokens)
        ):
            raise ValueError("group index out of range")

    @classmethod
    def from_tokens(cls, ids) -> "ConstraintSet":
        tokens, index = np.unique(np.asarray(ids).astype(str), return_inverse=True)
        return cls(index, tokens)

    @property
    def m(self) -> int:
        return len(self.tokens)

    @property
    def groups(self) -> list[np.ndarray]:
        order = np.argsort(self.group_index, kind="stable")
        bounds = np.cumsum(np.bincount(self.group_index, minlength=self.m))[:-1]
        return np.split(order, bounds)


@dataclass
class ClusterwiseModel:
    models: list
    centroids: np.ndarray
    sizes: np.ndarray
    config: HardClrConfig
    labels: np.ndarray
    objective_history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def k(self) -> int:
        return len(self.models)

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    @property
    def train_partition(self) -> Partition:
        return Partition(self.labels, self.k)

    def predict_all(self, X) -> np.ndarray:
        """(m, k) matrix of every cluster model's prediction."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} features, got shape {X.shape}")
        W = np.stack([m.w for m in self.models], axis=1)
        b = np.array([m.b for m in self.models])
        return X @ W + b


def criterion_matrix(X, y, models, centroids, gamma) -> np.ndarray:
    """``crit[j, i] = (y_j - x_j w_i - b_i)^2 + gamma ||x_j - c_i||^2``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    centroids = np.asarray(centroids, dtype=float)
    if any(m.d != X.shape[1] for m in models) or centroids.shape != (len(models), X.shape[1]):
        raise DimensionMismatch("models/centroids do not match the feature dimension")
    W = np.stack([m.w for m in models], axis=1)
    b = np.array([m.b for m in models])
    crit = (y[:, None] - X @ W - b) ** 2
    if gamma:
        diff = X[:, None, :] - centroids[None, :, :]
        crit = crit + gamma * np.einsum("jid,jid->ji", diff, diff)
    return crit


def _as_dataset(dataset) -> Dataset:
    return dataset if isinstance(dataset, Dataset) else Dataset(*dataset)


def labeling_step(dataset, models, centroids, gamma) -> Partition:
    ds = _as_dataset(dataset)
    crit = criterion_matrix(ds.X, ds.y, models, centroids, gamma)
    return Partition(np.argmin(crit, axis=1), len(models))


def _group_sums(crit, constraints: ConstraintSet) -> np.ndarray:
    counts = np.bincount(constraints.group_index, minlength=constraints.m)
    if np.any(counts == 0):
        raise EmptyGroup(f"constraint group {constraints.tokens[int(np.argmin(counts))]!r} has no members")
    out = np.empty((constraints.m, crit.shape[1]))
    for i in range(crit.shape[1]):
        out[:, i] = np.bincount(constraints.group_index, weights=crit[:, i], minlength=constraints.m)
    return out


def constrained_labeling_step(dataset, models, centroids, gamma, constraints: ConstraintSet) -> Partition:
    ds = _as_dataset(dataset)
    if constraints.group_index.shape[0] != ds.n:
        raise DimensionMismatch("constraints do not cover the dataset")
    crit = criterion_matrix(ds.X, ds.y, models, centroids, gamma)
    choice = np.argmin(_group_sums(crit, constraints), axis=1)
    return Partition(choice[constraints.group_index], len(models))


def initial_partition(n, k, rng, constraints: ConstraintSet | None = None) -> np.ndarray:
    """Uniform random labels; group-level when constrained. Empty clusters are
    filled with a random point (or group) taken from a cluster that can spare one."""
    if constraints is None:
        labels = rng.integers(0, k, size=n)
        units = np.arange(n)
        unit_labels = labels
    else:
        unit_labels = rng.integers(0, k, size=constraints.m)
        units = np.arange(constraints.m)
    for e in range(k):
        sizes = np.bincount(unit_labels, minlength=k)
        if sizes[e] == 0:
            donors = units[sizes[unit_labels] > 1]
            unit_labels[rng.choice(donors)] = e
    if constraints is None:
        return unit_labels
    return unit_labels[constraints.group_index]


def _reseed_empty(labels, crit, k) -> np.ndarray:
    """Give each empty cluster the worst-fitting point whose own cluster keeps
    at least one other member. A singleton refits to zero cost, so this never
    raises the objective after the next regression step."""
    labels = labels.copy()
    cost = crit[np.arange(labels.size), labels]
    for e in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[e] > 0:
            continue
        pick = int(np.argmax(np.where(sizes[labels] > 1, cost, -np.inf)))
        log.debug("re-seeding empty cluster %d with point %d", e, pick)
        labels[pick] = e
        cost[pick] = -np.inf
    return labels


def _restore_empty(new_units, old_units, unit_cost, k) -> np.ndarray:
    """Refill empty clusters by sending back, one at a time, the former member
    whose return costs least under the current models.

    Each returned unit sits at its previous label and every other unit at its
    argmin, so the labeled objective cannot exceed the previous one.
    """
    units = new_units.copy()
    while True:
        sizes = np.bincount(units, minlength=k)
        if sizes.min() > 0:
            return units
        e = int(np.argmin(sizes))
        cand = np.flatnonzero((old_units == e) & (units != e))
        delta = unit_cost[cand, e] - unit_cost[cand, units[cand]]
        pick = int(cand[np.argmin(delta)])
        log.debug("returning unit %d to empty cluster %d", pick, e)
        units[pick] = e


def regression_step(X, y, labels, k, spec: RegressorSpec, warm=None):
    models, centroids = [], np.empty((k, X.shape[1]))
    for i in range(k):
        idx = labels == i
        if not np.any(idx):
            raise InsufficientData(f"cluster {i} is empty")
        start = warm[i] if warm is not None and spec.kind == "lasso" else None
        models.append(fit_linear(X[idx], y[idx], spec=spec, warm_start=start))
        centroids[i] = X[idx].mean(axis=0)
    return models, centroids


def clr_objective(dataset, model: ClusterwiseModel, gamma, regressor: RegressorSpec | None = None) -> float:
    """Sum over points of ``residual^2 + gamma ||x - centroid||^2`` under the
    model's stored partition. With ``regressor`` the per-cluster coefficient
    penalties are added, giving the quantity the fit actually descends."""
    ds = _as_dataset(dataset)
    if model.labels.shape[0] != ds.n:
        raise DimensionMismatch("model partition does not match dataset size")
    crit = criterion_matrix(ds.X, ds.y, model.models, model.centroids, gamma)
    total = float(crit[np.arange(ds.n), model.labels].sum())
    if regressor is not None:
        total += sum(regressor.penalty(m.w) for m in model.models)
    return total


def _penalised_objective(crit, labels, models, spec):
    return float(crit[np.arange(labels.size), labels].sum()) + sum(spec.penalty(m.w) for m in models)


def fit_hard_clr(dataset, config: HardClrConfig, constraints: ConstraintSet | None = None,
                 callback=None, initial_labels=None) -> ClusterwiseModel:
    """Fit hard (optionally constrained) CLR from a seeded random partition.

    ``callback(iteration, labels, objective)`` is invoked after every
    regression step; ``objective`` includes the coefficient penalties.
    """
    ds = _as_dataset(dataset)
    k, gamma, spec = config.k, config.gamma, config.regressor
    if ds.n < k:
        raise InsufficientData(f"need at least k={k} rows, got {ds.n}")
    if constraints is not None:
        if constraints.group_index.shape[0] != ds.n:
            raise DimensionMismatch("constraints do not cover the dataset")
        if constraints.m < k:
            raise InsufficientData(f"need at least k={k} constraint groups, got {constraints.m}")
    rng = np.random.default_rng(config.seed)
    if initial_labels is None:
        labels = initial_partition(ds.n, k, rng, constraints)
    else:
        labels = np.asarray(initial_labels, dtype=np.int64).copy()

    X, y = ds.X, ds.y
    models, centroids = regression_step(X, y, labels, k, spec)
    crit = criterion_matrix(X, y, models, centroids, gamma)
    history = [_penalised_objective(crit, labels, models, spec)]
    if callback is not None:
        callback(0, labels, history[-1])

    converged = False
    n_iter = 0
    for it in range(1, config.max_iter + 1):
        if constraints is None:
            new = np.argmin(crit, axis=1)
            if np.bincount(new, minlength=k).min() == 0:
                new = _reseed_empty(new, crit, k)
        else:
            gsum = _group_sums(crit, constraints)
            units = np.argmin(gsum, axis=1)
            if np.bincount(units, minlength=k).min() == 0:
                first = np.array([g[0] for g in constraints.groups])
                units = _restore_empty(units, labels[first], gsum, k)
            new = units[constraints.group_index]
        n_iter = it
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
        models, centroids = regression_step(X, y, labels, k, spec, warm=models)
        crit = criterion_matrix(X, y, models, centroids, gamma)
        history.append(_penalised_objective(crit, labels, models, spec))
        if callback is not None:
            callback(it, labels, history[-1])
    log.debug("hard CLR k=%d gamma=%g: %d iterations, converged=%s", k, gamma, n_iter, converged)
    return ClusterwiseModel(
        models=models,
        centroids=centroids,
        sizes=np.bincount(labels, minlength=k),
        config=config,
        labels=labels,
        objective_history=history,
        n_iter=n_iter,
        converged=converged,
    )
