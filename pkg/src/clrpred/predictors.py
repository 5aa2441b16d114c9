"""Test-time prediction over a fitted clusterwise model.

Two families:

* label mode: pick one cluster per point (learned classifier, nearest
  centroid, or constraint-group lookup) and apply that cluster's model;
* weighted mode: ``f(x) = sum_i v_i(x) (x w_i + b_i)`` with weights from
  classifier probabilities, centroid distances, cluster sizes or a fixed
  vector.

Also holds the method builders (CLR-p, CLR-c, k-plane), ensembling over
random restarts, and the JSON model document.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .base_regressors import Dataset, LinearModel, RegressorSpec
from .classifiers import (
    ClassifierSpec,
    LabelPredictor,
    NearestCentroidClassifier,
    classifier_from_dict,
    fit_classifier,
)
from .errors import DimensionMismatch, InvalidSpec
from .hard_clr import ClusterwiseModel, ConstraintSet, HardClrConfig, fit_hard_clr
from .soft_clr import MixtureParams, fit_soft_clr, to_clusterwise

MODES = ("label", "weighted")
LABEL_SOURCES = ("classifier", "nearest_centroid", "constraint_lookup")
WEIGHT_SOURCES = ("classifier_proba", "kplane_distance", "cluster_size", "fixed")
DOCUMENT_FORMAT = "clrpred-model/1"

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionStrategy:
    mode: str = "label"
    label_source: str | None = "classifier"
    weight_source: str | None = None
    # inverse-distance k-plane weights; off by default
    inverse_distance: bool = False
    fixed_weights: tuple | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpec(f"unknown prediction mode {self.mode!r}")
        if self.mode == "label" and self.label_source not in LABEL_SOURCES:
            raise InvalidSpec("label mode requires a label_source")
        if self.mode == "weighted":
            if self.weight_source not in WEIGHT_SOURCES:
                raise InvalidSpec("weighted mode requires a weight_source")
            if self.weight_source == "fixed" and self.fixed_weights is None:
                raise InvalidSpec("fixed weights must be supplied")


def kplane_weights(centroids, x, inverse: bool = False) -> np.ndarray:
    """Distance-normalised cluster weights for one point.

    Default: ``v_i = ||x - c_i|| / sum_j ||x - c_j||``, which gives the
    farther clusters more weight. ``inverse=True`` normalises ``1 / ||x - c_i||``
    instead. All-zero distances give uniform weights.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return kplane_weight_matrix(centroids, x, inverse)[0]


def kplane_weight_matrix(centroids, X, inverse: bool = False) -> np.ndarray:
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    X = np.asarray(X, dtype=float)
    if X.shape[1] != centroids.shape[1]:
        raise DimensionMismatch("centroid and feature dimensions differ")
    dist = np.sqrt(np.maximum(((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2), 0.0))
    k = centroids.shape[0]
    out = np.full(dist.shape, 1.0 / k)
    if inverse:
        zero = dist == 0
        hit = zero.any(axis=1)
        out[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
        rest = ~hit
        inv = 1.0 / dist[rest]
        out[rest] = inv / inv.sum(axis=1, keepdims=True)
        return out
    total = dist.sum(axis=1)
    ok = total > 0
    out[ok] = dist[ok] / total[ok, None]
    return out


def size_weights(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    total = sizes.sum()
    if total < 1:
        raise ValueError("cluster sizes must sum to at least one")
    return sizes / total


def pi_collapse(params: MixtureParams) -> LinearModel:
    """The single linear model equal to pi-weighted averaging of components."""
    W = np.stack([m.w for m in params.models])
    b = np.array([m.b for m in params.models])
    return LinearModel(params.pi @ W, float(params.pi @ b))


@dataclass
class ClrPredictor:
    clusterwise: ClusterwiseModel
    strategy: PredictionStrategy
    predictor: LabelPredictor | None = None
    constraint_map: dict | None = None
    seed: int | None = None

    def __post_init__(self):
        s = self.strategy
        needs_classifier = (s.mode == "label" and s.label_source == "classifier") or (
            s.mode == "weighted" and s.weight_source == "classifier_proba")
        if needs_classifier and self.predictor is None:
            raise InvalidSpec("strategy needs a trained label predictor")
        if s.mode == "label" and s.label_source == "constraint_lookup":
            if self.constraint_map is None:
                raise InvalidSpec("constraint lookup needs a constraint map")
            bad = [g for g, c in self.constraint_map.items() if not 0 <= c < self.clusterwise.k]
            if bad:
                raise InvalidSpec(f"constraint map labels out of range for groups {bad}")

    @property
    def d(self) -> int:
        return self.clusterwise.d

    def labels(self, X, groups=None) -> np.ndarray:
        """Cluster label per row; -1 marks constraint groups unseen in training."""
        src = self.strategy.label_source
        if src == "classifier":
            return self.predictor.predict(X)
        if src == "nearest_centroid":
            return NearestCentroidClassifier(self.clusterwise.centroids).predict(X)
        if groups is None:
            raise InvalidSpec("constraint lookup needs group tokens at prediction time")
        groups = np.asarray(groups).astype(str)
        if groups.shape[0] != np.asarray(X).shape[0]:
            raise DimensionMismatch("one group token per row is required")
        return np.array([self.constraint_map.get(g, -1) for g in groups], dtype=np.int64)

    def weights(self, X) -> np.ndarray:
        src = self.strategy.weight_source
        cw = self.clusterwise
        m = np.asarray(X).shape[0]
        if src == "classifier_proba":
            return self.predictor.predict_proba(X)
        if src == "kplane_distance":
            return kplane_weight_matrix(cw.centroids, X, self.strategy.inverse_distance)
        if src == "cluster_size":
            return np.tile(size_weights(cw.sizes), (m, 1))
        v = np.asarray(self.strategy.fixed_weights, dtype=float)
        return np.tile(v, (m, 1))

    def predict(self, X, groups=None) -> np.ndarray:
        if self.strategy.mode == "label":
            return predict_label_mode(self, X, groups)
        return predict_weighted(self, X)


def _check_features(pred: ClrPredictor, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != pred.d:
        raise DimensionMismatch(f"model expects {pred.d} features, got shape {X.shape}")
    return X


def predict_label_mode(pred: ClrPredictor, X, groups=None) -> np.ndarray:
    """Apply each row's assigned cluster model. Rows whose constraint group
    was never seen in training fall back to size-weighted averaging."""
    X = _check_features(pred, X)
    all_preds = pred.clusterwise.predict_all(X)
    labels = pred.labels(X, groups)
    out = np.empty(X.shape[0])
    seen = labels >= 0
    out[seen] = all_preds[np.flatnonzero(seen), labels[seen]]
    if not np.all(seen):
        log.info("%d rows with unseen constraint groups use size weights", int((~seen).sum()))
        out[~seen] = all_preds[~seen] @ size_weights(pred.clusterwise.sizes)
    return out


def predict_weighted(pred: ClrPredictor, X) -> np.ndarray:
    X = _check_features(pred, X)
    return np.sum(pred.weights(X) * pred.clusterwise.predict_all(X), axis=1)


@dataclass
class EnsemblePredictor:
    members: list

    def __post_init__(self):
        if not self.members:
            raise InvalidSpec("an ensemble needs at least one member")
        if len({m.d for m in self.members}) != 1:
            raise DimensionMismatch("ensemble members disagree on feature dimension")

    @property
    def d(self) -> int:
        return self.members[0].d

    def predict(self, X, groups=None) -> np.ndarray:
        return predict_ensemble(self, X, groups)


def predict_ensemble(ens: EnsemblePredictor, X, groups=None) -> np.ndarray:
    return np.mean([m.predict(X, groups) for m in ens.members], axis=0)


# ---------------------------------------------------------------------------
# builders


@dataclass(frozen=True)
class MethodConfig:
    """Everything needed to fit one CLR-based predictor."""

    method: str = "clr_p"  # clr_p | clr_c | kplane
    k: int = 2
    gamma: float = 0.0
    clr: str = "hard"  # hard | soft
    weighted: str | bool = False  # clr_p: bool; kplane: none | dist | size | inverse_dist
    n_estimators: int = 1
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    max_iter: int = 5

    def hard_config(self, seed) -> HardClrConfig:
        return HardClrConfig(k=self.k, gamma=self.gamma, max_iter=self.max_iter, seed=int(seed),
                             regressor=self.regressor)


def member_seed(seed, index) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def fit_clusterwise(dataset: Dataset, config: HardClrConfig, clr: str = "hard",
                    constraints: ConstraintSet | None = None) -> ClusterwiseModel:
    if clr == "hard":
        return fit_hard_clr(dataset, config, constraints)
    if clr == "soft":
        if constraints is not None:
            raise InvalidSpec("constraints are only supported with hard CLR")
        params, q = fit_soft_clr(dataset, config)
        return to_clusterwise(dataset, params, q, config)
    raise InvalidSpec(f"unknown CLR kind {clr!r}")


def fit_clr_p(dataset: Dataset, config: HardClrConfig, clr: str = "hard",
              classifier: ClassifierSpec | None = None, weighted: bool = False) -> ClrPredictor:
    classifier = classifier or ClassifierSpec()
    cw = fit_clusterwise(dataset, config, clr)
    predictor = fit_classifier(dataset.X, cw.labels, classifier.with_seed(config.seed), n_classes=config.k)
    if weighted:
        strategy = PredictionStrategy("weighted", None, "classifier_proba")
    else:
        strategy = PredictionStrategy("label", "classifier")
    return ClrPredictor(cw, strategy, predictor, seed=config.seed)


def fit_kplane(dataset: Dataset, config: HardClrConfig, clr: str = "hard",
               weighting: str = "none") -> ClrPredictor:
    cw = fit_clusterwise(dataset, config, clr)
    if weighting == "none":
        strategy = PredictionStrategy("label", "nearest_centroid")
    elif weighting == "dist":
        strategy = PredictionStrategy("weighted", None, "kplane_distance")
    elif weighting == "inverse_dist":
        strategy = PredictionStrategy("weighted", None, "kplane_distance", inverse_distance=True)
    elif weighting == "size":
        strategy = PredictionStrategy("weighted", None, "cluster_size")
    else:
        raise InvalidSpec(f"unknown k-plane weighting {weighting!r}")
    return ClrPredictor(cw, strategy, seed=config.seed)


def fit_clr_c(dataset: Dataset, config: HardClrConfig) -> ClrPredictor:
    if dataset.constraint_ids is None:
        raise InvalidSpec("CLR-c needs constraint tokens on the dataset")
    constraints = ConstraintSet.from_tokens(dataset.constraint_ids)
    cw = fit_hard_clr(dataset, config, constraints)
    first = np.array([g[0] for g in constraints.groups])
    cmap = {tok: int(cw.labels[j]) for tok, j in zip(constraints.tokens, first)}
    return ClrPredictor(cw, PredictionStrategy("label", "constraint_lookup"), constraint_map=cmap,
                        seed=config.seed)


def fit_method(dataset: Dataset, cfg: MethodConfig, seed: int = 0):
    """Fit one CLR-based method, as an ensemble when ``n_estimators > 1``."""

    def one(s):
        hc = cfg.hard_config(s)
        if cfg.method == "clr_p":
            return fit_clr_p(dataset, hc, cfg.clr, cfg.classifier, bool(cfg.weighted))
        if cfg.method == "kplane":
            weighting = cfg.weighted if isinstance(cfg.weighted, str) else ("none" if not cfg.weighted else "dist")
            return fit_kplane(dataset, hc, cfg.clr, weighting)
        if cfg.method == "clr_c":
            return fit_clr_c(dataset, hc)
        raise InvalidSpec(f"unknown method {cfg.method!r}")

    if cfg.n_estimators <= 1:
        return one(seed)
    return EnsemblePredictor([one(member_seed(seed, i)) for i in range(cfg.n_estimators)])


# ---------------------------------------------------------------------------
# serialisation


def _clr_to_dict(pred: ClrPredictor) -> dict:
    cw = pred.clusterwise
    cfg = cw.config
    return {
        "k": cw.k,
        "d": cw.d,
        "clusters": [
            {"w": m.w.tolist(), "b": m.b, "centroid": c.tolist(), "size": int(s)}
            for m, c, s in zip(cw.models, cw.centroids, cw.sizes)
        ],
        "config": {"k": cfg.k, "gamma": cfg.gamma, "max_iter": cfg.max_iter, "seed": cfg.seed,
                   "regressor": asdict(cfg.regressor)},
        "strategy": {**asdict(pred.strategy),
                     "fixed_weights": None if pred.strategy.fixed_weights is None
                     else list(pred.strategy.fixed_weights)},
        "classifier": None if pred.predictor is None else pred.predictor.to_dict(),
        "constraint_map": pred.constraint_map,
        "seed": pred.seed,
    }


def _clr_from_dict(data) -> ClrPredictor:
    cfg = data["config"]
    config = HardClrConfig(k=cfg["k"], gamma=cfg["gamma"], max_iter=cfg["max_iter"], seed=cfg["seed"],
                           regressor=RegressorSpec(**cfg["regressor"]))
    clusters = data["clusters"]
    cw = ClusterwiseModel(
        models=[LinearModel(np.array(c["w"]), c["b"]) for c in clusters],
        centroids=np.array([c["centroid"] for c in clusters], dtype=float).reshape(data["k"], data["d"]),
        sizes=np.array([c["size"] for c in clusters], dtype=np.int64),
        config=config,
        labels=np.empty(0, dtype=np.int64),
    )
    st = dict(data["strategy"])
    if st.get("fixed_weights") is not None:
        st["fixed_weights"] = tuple(st["fixed_weights"])
    predictor = None if data["classifier"] is None else classifier_from_dict(data["classifier"])
    return ClrPredictor(cw, PredictionStrategy(**st), predictor, data["constraint_map"], data["seed"])


def to_document(pred, extra: dict | None = None) -> dict:
    """Self-describing JSON-ready document for a single or ensemble predictor."""
    if isinstance(pred, EnsemblePredictor):
        body = {"type": "ensemble", "members": [_clr_to_dict(m) for m in pred.members]}
    elif isinstance(pred, ClrPredictor):
        body = {"type": "clr", **_clr_to_dict(pred)}
    else:
        raise TypeError(f"cannot serialise {type(pred).__name__}")
    return {"format": DOCUMENT_FORMAT, "model": body, **(extra or {})}


def from_document(doc: dict):
    if doc.get("format") != DOCUMENT_FORMAT:
        raise InvalidSpec(f"unsupported model document format {doc.get('format')!r}")
    body = doc["model"]
    if body["type"] == "ensemble":
        return EnsemblePredictor([_clr_from_dict(m) for m in body["members"]])
    return _clr_from_dict(body)


def dumps(pred, extra=None) -> str:
    return json.dumps(to_document(pred, extra), sort_keys=True)


def loads(text: str):
    return from_document(json.loads(text))
