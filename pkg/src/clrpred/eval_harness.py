"""Repeated k-fold cross-validation, grid search, the oracle-label diagnostic
and report serialisation."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .base_regressors import Dataset, RegressorSpec, fit_linear, mse, predict_linear, r2
from .classifiers import ClassifierSpec, NearestCentroidClassifier, fit_classifier
from .data_io import UnitIntervalScaler, scale_split
from .errors import FoldTooSmall, InvalidSpec, ZeroVariance
from .hard_clr import HardClrConfig, fit_hard_clr
from .predictors import (
    ClrPredictor,
    MethodConfig,
    PredictionStrategy,
    fit_clusterwise,
    fit_method,
    kplane_weight_matrix,
    size_weights,
)

METHODS = ("lr", "clr_p", "clr_c", "kplane", "rf", "svr_external")


@dataclass(frozen=True)
class CvPlan:
    n_folds: int = 10
    n_repeats: int = 5
    seed: int = 0
    # reuse one CLR fit per (fold, k, gamma, ...) across CLR-p and k-plane cells
    share_labels: bool = False

    def __post_init__(self):
        if self.n_folds < 2:
            raise InvalidSpec("n_folds must be at least 2")
        if self.n_repeats < 1:
            raise InvalidSpec("n_repeats must be at least 1")

    def folds(self, n: int, repeat: int) -> list:
        """Disjoint, covering test-index arrays for one repeat."""
        if n < self.n_folds:
            raise FoldTooSmall(f"{n} rows cannot fill {self.n_folds} folds")
        perm = np.random.default_rng([int(self.seed), int(repeat)]).permutation(n)
        return np.array_split(perm, self.n_folds)

    def fold_seed(self, repeat: int, fold: int) -> int:
        return int(np.random.SeedSequence([int(self.seed), int(repeat), int(fold)]).generate_state(1)[0])


@dataclass(frozen=True)
class GridSpec:
    method: str
    axes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidSpec(f"unknown method {self.method!r}")
        for name, values in self.axes.items():
            if len(values) == 0:
                raise InvalidSpec(f"grid axis {name!r} is empty")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def cells(self) -> list:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


@dataclass
class CvRow:
    method: str
    params: dict
    mse_mean: float
    mse_std: float
    r2_mean: float
    r2_std: float
    seconds: float = 0.0
    repeat_mse: list = field(default_factory=list)
    repeat_r2: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class EvalReport:
    dataset: str
    plan: CvPlan
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def best(self) -> dict:
        """Best row per method: lowest mean MSE, then smaller k, then smaller gamma."""
        out = {}
        for row in self.rows:
            cur = out.get(row.method)
            if cur is None or _rank(row) < _rank(cur):
                out[row.method] = row
        return out

    def to_dict(self):
        return {"dataset": self.dataset, "plan": asdict(self.plan), "meta": self.meta,
                "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, data):
        return cls(data["dataset"], CvPlan(**data["plan"]), [CvRow(**r) for r in data["rows"]],
                   data.get("meta", {}))


def _rank(row: CvRow):
    return (row.mse_mean, row.params.get("k", 0), row.params.get("gamma", 0.0))


# ---------------------------------------------------------------------------
# baseline predictors


class LinearBaseline:
    def __init__(self, model):
        self.model = model

    @property
    def d(self):
        return self.model.d

    def predict(self, X, groups=None):
        return predict_linear(self.model, X)


class ForestRegressorBaseline:
    """Thin wrapper around scikit-learn's random forest regressor."""

    def __init__(self, **params):
        from sklearn.ensemble import RandomForestRegressor

        self.model = RandomForestRegressor(**params)

    def fit(self, X, y):
        self.model.fit(X, y)
        return self

    def predict(self, X, groups=None):
        return self.model.predict(X)


def _regressor(params) -> RegressorSpec:
    kind = params.get("regressor", "ols")
    lam = float(params.get("lambda", params.get("lam", 0.0)))
    return RegressorSpec(kind=kind, lam=lam)


def _classifier(params) -> ClassifierSpec:
    kind = params.get("classifier", "forest")
    if "n_trees" in params:
        return ClassifierSpec(kind=kind, n_trees=int(params["n_trees"]))
    return ClassifierSpec(kind=kind)


def method_config(method: str, params: dict) -> MethodConfig:
    return MethodConfig(
        method=method,
        k=int(params.get("k", 2)),
        gamma=float(params.get("gamma", 0.0)),
        clr=params.get("clr", "hard"),
        weighted=params.get("weighted", "none" if method == "kplane" else False),
        n_estimators=int(params.get("n_estimators", 1)),
        regressor=_regressor(params),
        classifier=_classifier(params),
        max_iter=int(params.get("max_iter", 5)),
    )


def cell_builder(method: str, params: dict, cache: dict | None = None):
    """Return ``build(train, seed, key=None) -> predictor`` for one grid cell.

    With a ``cache`` and a fold ``key``, single-estimator CLR-p and k-plane
    cells reuse one clusterwise fit per fold and CLR configuration.
    """
    if method == "lr":
        spec = _regressor(params)
        return lambda train, seed, key=None: LinearBaseline(fit_linear(train.X, train.y, spec=spec))
    if method == "rf":
        rf = {"n_estimators": int(params.get("n_trees", 30)),
              "max_depth": params.get("max_depth"),
              "max_features": params.get("max_features", 1.0),
              "min_samples_split": int(params.get("min_samples_split", 2)),
              "min_samples_leaf": int(params.get("min_samples_leaf", 1))}
        if rf["max_features"] in ("all", "d", None):
            rf["max_features"] = 1.0

        def build_rf(train, seed, key=None):
            mf = rf["max_features"]
            if isinstance(mf, int):
                mf = min(mf, train.d)
            return ForestRegressorBaseline(**{**rf, "max_features": mf, "random_state": seed % 2**32}).fit(
                train.X, train.y)

        return build_rf
    if method == "svr_external":
        raise InvalidSpec("SVR results are supplied externally, not fitted")
    cfg = method_config(method, params)

    def build(train, seed, key=None):
        if cache is None or key is None or cfg.n_estimators > 1 or method == "clr_c":
            return fit_method(train, cfg, seed)
        hc = cfg.hard_config(seed)
        ck = (key, cfg.k, cfg.gamma, cfg.clr, cfg.regressor, cfg.max_iter)
        if ck not in cache:
            cache[ck] = fit_clusterwise(train, hc, cfg.clr)
        cw = cache[ck]
        if method == "clr_p":
            clf = fit_classifier(train.X, cw.labels, cfg.classifier.with_seed(seed), n_classes=cfg.k)
            strategy = (PredictionStrategy("weighted", None, "classifier_proba") if cfg.weighted
                        else PredictionStrategy("label", "classifier"))
            return ClrPredictor(cw, strategy, clf, seed=seed)
        weighting = cfg.weighted if isinstance(cfg.weighted, str) else ("dist" if cfg.weighted else "none")
        strategy = {
            "none": PredictionStrategy("label", "nearest_centroid"),
            "dist": PredictionStrategy("weighted", None, "kplane_distance"),
            "inverse_dist": PredictionStrategy("weighted", None, "kplane_distance", inverse_distance=True),
            "size": PredictionStrategy("weighted", None, "cluster_size"),
        }[weighting]
        return ClrPredictor(cw, strategy, seed=seed)

    return build


# ---------------------------------------------------------------------------
# cross-validation


def _repeat_scores(y, pred):
    try:
        score = r2(y, pred)
    except ZeroVariance:
        score = float("nan")
    return mse(y, pred), score


def cross_validate(dataset: Dataset, builder, plan: CvPlan, method: str = "custom",
                   params: dict | None = None, on_fold=None, cache: dict | None = None) -> CvRow:
    """Repeated k-fold CV with out-of-fold predictions pooled per repeat.

    ``builder(train, seed, key)`` must return an object with
    ``predict(X, groups)``. Scaling, when the dataset asks for it, is fitted
    on the training folds only. ``on_fold(repeat, fold, train_idx, test_idx,
    train)`` is called before each fit.
    """
    n = dataset.n
    repeat_mse, repeat_r2 = [], []
    elapsed = 0.0
    for rep in range(plan.n_repeats):
        folds = plan.folds(n, rep)
        pred = np.empty(n)
        for f, test_idx in enumerate(folds):
            train_idx = np.concatenate([folds[g] for g in range(len(folds)) if g != f])
            train, test = dataset.subset(train_idx), dataset.subset(test_idx)
            if dataset.scale_features:
                train, test, _ = scale_split(train, test)
            if on_fold is not None:
                on_fold(rep, f, train_idx, test_idx, train)
            t0 = time.perf_counter()
            model = builder(train, plan.fold_seed(rep, f), (rep, f))
            pred[test_idx] = model.predict(test.X, test.constraint_ids)
            elapsed += time.perf_counter() - t0
        m, s = _repeat_scores(dataset.y, pred)
        repeat_mse.append(m)
        repeat_r2.append(s)
    return CvRow(
        method=method,
        params=dict(params or {}),
        mse_mean=float(np.mean(repeat_mse)),
        mse_std=float(np.std(repeat_mse)),
        r2_mean=float(np.mean(repeat_r2)),
        r2_std=float(np.std(repeat_r2)),
        seconds=elapsed / (plan.n_repeats * plan.n_folds),
        repeat_mse=[float(v) for v in repeat_mse],
        repeat_r2=[float(v) for v in repeat_r2],
    )


def _run_cell(args):
    dataset, method, params, plan = args
    return cross_validate(dataset, cell_builder(method, params), plan, method, params)


def grid_search(dataset: Dataset, grid: GridSpec | list, plan: CvPlan, jobs: int = 1,
                dataset_name: str = "dataset", progress=None) -> EvalReport:
    """Cross-validate every cell of one or more grids.

    Seeds depend only on the plan, so parallel runs (``jobs > 1``) produce
    the same numbers as serial ones.
    """
    grids = [grid] if isinstance(grid, GridSpec) else list(grid)
    work = [(g.method, cell) for g in grids for cell in g.cells()]
    if not work:
        raise InvalidSpec("grid has no cells")
    if any(m == "svr_external" for m, _ in work):
        raise InvalidSpec("SVR cells cannot be run; add them with external_row")
    report = EvalReport(dataset_name, plan, meta={"cells": len(work)})
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, [(dataset, m, c, plan) for m, c in work]))
    else:
        cache = {} if plan.share_labels else None
        rows = []
        for i, (method, cell) in enumerate(work):
            rows.append(cross_validate(dataset, cell_builder(method, cell, cache), plan, method, cell,
                                       cache=cache))
            if progress is not None:
                progress(i + 1, len(work), rows[-1])
    report.rows = rows
    return report


def external_row(method: str, mse_mean: float, mse_std: float, r2_mean: float,
                 seconds: float = float("nan"), params: dict | None = None) -> CvRow:
    """A row produced outside this package (e.g. an SVR run) for side-by-side tables."""
    return CvRow(method, dict(params or {}), float(mse_mean), float(mse_std), float(r2_mean),
                 float("nan"), float(seconds))


# ---------------------------------------------------------------------------
# oracle-label diagnostic


def oracle_label_experiment(dataset: Dataset, split_fraction: float, config: HardClrConfig,
                            classifier: ClassifierSpec | None = None, seed: int | None = None) -> dict:
    """Fit hard CLR on all rows, then ask how well labels transfer to a held-out split.

    ``split_fraction`` is the share of rows held out for testing. Returns a
    dict with the ``best`` R2 (true CLR labels on the test rows), label
    accuracies of the classifier and of the nearest-centroid rule, and test R2
    of their label-mode and weighted predictions, plus plain LR.
    """
    if not 0 < split_fraction < 1:
        raise InvalidSpec("split_fraction must lie in (0, 1)")
    classifier = classifier or ClassifierSpec()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    perm = rng.permutation(dataset.n)
    n_test = max(1, int(round(split_fraction * dataset.n)))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    ds = dataset
    if dataset.scale_features:
        scaler = UnitIntervalScaler().fit(dataset.X[train_idx])
        ds = Dataset(scaler.transform(dataset.X), dataset.y, dataset.constraint_ids,
                     list(dataset.feature_names), False)

    cw = fit_hard_clr(ds, config)
    labels = cw.labels
    Xtr, Xte, yte = ds.X[train_idx], ds.X[test_idx], ds.y[test_idx]
    all_te = cw.predict_all(Xte)
    rows = np.arange(len(test_idx))

    clf = fit_classifier(Xtr, labels[train_idx], classifier.with_seed(config.seed), n_classes=config.k)
    nc = NearestCentroidClassifier(cw.centroids)
    clf_lab, nc_lab = clf.predict(Xte), nc.predict(Xte)
    true_lab = labels[test_idx]

    lr = fit_linear(Xtr, ds.y[train_idx], spec=config.regressor)
    return {
        "k": config.k,
        "gamma": config.gamma,
        "n_train": int(len(train_idx)),
        "n_test": int(len(test_idx)),
        "best_r2": r2(yte, all_te[rows, true_lab]),
        "classifier_accuracy": float(np.mean(clf_lab == true_lab)),
        "kplane_accuracy": float(np.mean(nc_lab == true_lab)),
        "clr_p_r2": r2(yte, all_te[rows, clf_lab]),
        "kplane_r2": r2(yte, all_te[rows, nc_lab]),
        "weighted_clr_p_r2": r2(yte, np.sum(clf.predict_proba(Xte) * all_te, axis=1)),
        "weighted_kplane_r2": r2(yte, np.sum(kplane_weight_matrix(cw.centroids, Xte) * all_te, axis=1)),
        "size_weighted_r2": r2(yte, all_te @ size_weights(cw.sizes)),
        "lr_r2": r2(yte, predict_linear(lr, Xte)),
    }


# ---------------------------------------------------------------------------
# report emission


def _fmt_params(params):
    return ", ".join(f"{k}={v}" for k, v in params.items()) or "-"


def emit_report(report: EvalReport, fmt: str = "table-text") -> str:
    """Serialise a report as ``table-text``, ``csv`` or ``json``."""
    if not report.rows:
        raise InvalidSpec("cannot emit an empty report")
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2)
    best = {id(r) for r in report.best().values()}
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "params", "mse_mean", "mse_std", "r2_mean", "r2_std", "seconds", "best"])
        for r in report.rows:
            w.writerow([r.method, json.dumps(r.params, sort_keys=True), repr(r.mse_mean), repr(r.mse_std),
                        repr(r.r2_mean), repr(r.r2_std), repr(r.seconds), int(id(r) in best)])
        return buf.getvalue()
    if fmt != "table-text":
        raise InvalidSpec(f"unknown report format {fmt!r}")
    header = ["method", "params", "MSE", "R2", "time (s)", ""]
    body = [[r.method, _fmt_params(r.params), f"{r.mse_mean:.2f} ± {r.mse_std:.2f}", f"{r.r2_mean:.2f}",
             f"{r.seconds:.3f}", "*" if id(r) in best else ""] for r in report.rows]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = [f"# {report.dataset}: {report.plan.n_repeats}x{report.plan.n_folds}-fold CV, seed {report.plan.seed}"]
    for row in [header] + body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def load_report(text: str) -> EvalReport:
    return EvalReport.from_dict(json.loads(text))
