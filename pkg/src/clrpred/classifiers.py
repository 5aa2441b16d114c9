"""Cluster-label predictors: softmax regression, a CART random forest, and the
rule-based nearest-centroid and constant predictors.

Every predictor exposes ``predict_proba`` (rows sum to one over ``n_classes``)
and ``predict``, its argmax with ties going to the lowest class index.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from . import _tree
from .errors import DimensionMismatch

FOREST_KINDS = ("forest", "random_forest")


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "forest"
    # logistic
    alpha: float = 1.0
    max_epochs: int = 2000
    tol: float = 1e-6
    # forest
    n_trees: int = 20
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | str | None = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic",) + FOREST_KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def with_seed(self, seed) -> "ClassifierSpec":
        return ClassifierSpec(**{**asdict(self), "seed": int(seed)})


def _check_X(X, d=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-D, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} features, got {X.shape[1]}")
    return X


class LabelPredictor:
    kind = "base"
    n_classes: int
    d: int

    def predict_proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        raise NotImplementedError


class ConstantClassifier(LabelPredictor):
    kind = "constant"

    def __init__(self, label, n_classes, d):
        self.label, self.n_classes, self.d = int(label), int(n_classes), int(d)

    def predict_proba(self, X):
        X = _check_X(X, self.d)
        out = np.zeros((X.shape[0], self.n_classes))
        out[:, self.label] = 1.0
        return out

    def to_dict(self):
        return {"kind": self.kind, "label": self.label, "n_classes": self.n_classes, "d": self.d}


class NearestCentroidClassifier(LabelPredictor):
    """Hard nearest-centroid rule; probabilities are one-hot."""

    kind = "nearest_centroid"

    def __init__(self, centroids):
        self.centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")
        self.n_classes, self.d = self.centroids.shape

    def sq_distances(self, X) -> np.ndarray:
        X = _check_X(X, self.d)
        diff = X[:, None, :] - self.centroids[None, :, :]
        return np.einsum("jid,jid->ji", diff, diff)

    def predict(self, X):
        return np.argmin(self.sq_distances(X), axis=1)

    def predict_proba(self, X):
        return np.eye(self.n_classes)[self.predict(X)]

    def to_dict(self):
        return {"kind": self.kind, "centroids": self.centroids.tolist()}


def nearest_centroid_predictor(centroids) -> NearestCentroidClassifier:
    return NearestCentroidClassifier(centroids)


class LogisticClassifier(LabelPredictor):
    """Multinomial logistic regression.

    Minimises ``sum_j cross_entropy_j + alpha / 2 * ||W||^2`` (intercepts
    unpenalised) by accelerated full-batch gradient descent with
    backtracking. Classes absent from the training labels get probability 0.
    """

    kind = "logistic"

    def __init__(self, n_classes, d, classes=None, W=None, b=None):
        self.n_classes, self.d = int(n_classes), int(d)
        self.classes = np.arange(self.n_classes) if classes is None else np.asarray(classes, dtype=np.int64)
        c = len(self.classes)
        self.W = np.zeros((self.d, c)) if W is None else np.asarray(W, dtype=float)
        self.b = np.zeros(c) if b is None else np.asarray(b, dtype=float)
        self.n_epochs = 0

    def fit(self, X, labels, alpha=1.0, max_epochs=2000, tol=1e-6):
        X = _check_X(X, self.d)
        labels = np.asarray(labels, dtype=np.int64)
        self.classes = np.unique(labels)
        col = np.searchsorted(self.classes, labels)
        n, c = X.shape[0], len(self.classes)
        Y = np.zeros((n, c))
        Y[np.arange(n), col] = 1.0
        Xb = np.hstack([X, np.ones((n, 1))])
        ridge = np.full((self.d + 1, 1), alpha)
        ridge[-1] = 0.0

        def objective(theta):
            Z = Xb @ theta
            lse = logsumexp(Z, axis=1)
            f = float(np.sum(lse - np.sum(Y * Z, axis=1))) + 0.5 * float(np.sum(ridge * theta ** 2))
            return f, Z, lse

        def gradient(theta, Z, lse):
            P = np.exp(Z - lse[:, None])
            return Xb.T @ (P - Y) + ridge * theta

        theta = np.zeros((self.d + 1, c))
        z = theta.copy()
        f_theta = objective(theta)[0]
        lipschitz = 1.0
        t = 1.0
        epoch = 0
        for epoch in range(1, max_epochs + 1):
            f_z, Z, lse = objective(z)
            g = gradient(z, Z, lse)
            gnorm2 = float(np.sum(g ** 2))
            if math.sqrt(gnorm2) < tol:
                if f_z <= f_theta:
                    theta = z
                break
            while True:
                cand = z - g / lipschitz
                f_cand = objective(cand)[0]
                if f_cand <= f_z - 0.5 * gnorm2 / lipschitz or lipschitz > 1e300:
                    break
                lipschitz *= 2.0
            if f_cand >= f_theta:
                if t == 1.0:
                    break  # a plain gradient step no longer helps: float floor
                # adaptive restart: momentum overshot
                t = 1.0
                z = theta
                continue
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            z = cand + ((t - 1.0) / t_next) * (cand - theta)
            theta, f_theta, t = cand, f_cand, t_next
            lipschitz = max(lipschitz / 1.5, 1e-12)
        self.W, self.b = theta[:-1], theta[-1]
        self.n_epochs = epoch
        return self

    def predict_proba(self, X):
        X = _check_X(X, self.d)
        Z = X @ self.W + self.b
        P = np.exp(Z - logsumexp(Z, axis=1, keepdims=True))
        out = np.zeros((X.shape[0], self.n_classes))
        out[:, self.classes] = P
        return out

    def to_dict(self):
        return {"kind": self.kind, "n_classes": self.n_classes, "d": self.d,
                "classes": self.classes.tolist(), "W": self.W.tolist(), "b": self.b.tolist()}


def _resolve_max_features(max_features, d) -> int:
    if max_features is None or max_features == "all":
        return d
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if max_features == "log2":
        return max(1, int(math.log2(d)))
    if isinstance(max_features, float):
        return max(1, int(max_features * d))
    return max(1, min(int(max_features), d))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict_proba(self, X):
        return _tree.apply_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_dict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["feature"], dtype=np.int64), np.asarray(data["threshold"], dtype=float),
                   np.asarray(data["left"], dtype=np.int64), np.asarray(data["right"], dtype=np.int64),
                   np.asarray(data["value"], dtype=float))


class RandomForestClassifier(LabelPredictor):
    """Bagged CART trees with Gini splits and per-split feature subsampling.

    Probabilities are the mean over trees of the leaf class frequencies.
    Tree ``t`` draws its bootstrap sample and split randomness from a stream
    derived from ``(seed, t)``, so results do not depend on build order.
    """

    kind = "random_forest"

    def __init__(self, n_classes, d, trees=None):
        self.n_classes, self.d = int(n_classes), int(d)
        self.trees = list(trees or [])

    def fit(self, X, labels, spec: ClassifierSpec):
        X = np.ascontiguousarray(_check_X(X, self.d))
        labels = np.asarray(labels, dtype=np.int64)
        n = X.shape[0]
        mtry = _resolve_max_features(spec.max_features, self.d)
        depth = -1 if spec.max_depth is None else int(spec.max_depth)
        self.trees = []
        for t in range(spec.n_trees):
            rng = np.random.default_rng([int(spec.seed), t])
            sample = rng.integers(0, n, size=n) if spec.bootstrap else np.arange(n)
            tree_seed = int(rng.integers(0, 2**31 - 1))
            arrays = _tree.build_tree(X, labels, sample.astype(np.int64), self.n_classes, depth,
                                      int(spec.min_samples_split), int(spec.min_samples_leaf), mtry, tree_seed)
            self.trees.append(Tree(*arrays))
        return self

    def predict_proba(self, X):
        X = np.ascontiguousarray(_check_X(X, self.d))
        out = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            out += tree.predict_proba(X)
        return out / len(self.trees)

    def to_dict(self):
        return {"kind": self.kind, "n_classes": self.n_classes, "d": self.d,
                "trees": [t.to_dict() for t in self.trees]}


def fit_classifier(X, labels, spec: ClassifierSpec, n_classes: int | None = None) -> LabelPredictor:
    """Train a label predictor on ``(X, labels)``; labels lie in ``[0, n_classes)``.

    A single represented class yields a constant predictor.
    """
    X = _check_X(X)
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64).reshape(-1)
    if labels.shape[0] != X.shape[0]:
        raise DimensionMismatch("labels length does not match X")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    present = np.unique(labels)
    if present.size == 1:
        return ConstantClassifier(present[0], n_classes, X.shape[1])
    if spec.kind == "logistic":
        return LogisticClassifier(n_classes, X.shape[1]).fit(X, labels, spec.alpha, spec.max_epochs, spec.tol)
    return RandomForestClassifier(n_classes, X.shape[1]).fit(X, labels, spec)


def classifier_from_dict(data) -> LabelPredictor:
    kind = data["kind"]
    if kind == "constant":
        return ConstantClassifier(data["label"], data["n_classes"], data["d"])
    if kind == "nearest_centroid":
        return NearestCentroidClassifier(data["centroids"])
    if kind == "logistic":
        return LogisticClassifier(data["n_classes"], data["d"], data["classes"], data["W"], data["b"])
    if kind == "random_forest":
        return RandomForestClassifier(data["n_classes"], data["d"], [Tree.from_dict(t) for t in data["trees"]])
    raise ValueError(f"unknown classifier kind {kind!r}")
