"""Command-line entry point: ``clrpred {fit,predict,cv,grid,oracle,synth}``.

Settings come from built-in defaults, then an optional ``--config`` file
(YAML or JSON, keys named like the long flags), then command-line flags.
Exit status is 0 on success, 2 for usage errors and 1 for data errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .base_regressors import Dataset, LinearModel, fit_linear, mse, predict_linear
from .classifiers import ClassifierSpec
from .data_io import (
    BUILTIN_DATASETS,
    SyntheticSpec,
    UnitIntervalScaler,
    builtin_dataset_path,
    builtin_recipe,
    generate_synthetic,
    load_csv,
    write_csv,
    write_truth,
)
from .errors import ClrError, DimensionMismatch, InvalidSpec, UnknownRecipe
from .eval_harness import (
    METHODS,
    CvPlan,
    GridSpec,
    emit_report,
    grid_search,
    method_config,
    oracle_label_experiment,
)
from .hard_clr import HardClrConfig
from .predictors import DOCUMENT_FORMAT, fit_method, from_document, to_document

log = logging.getLogger("clrpred")

VERBS = ("fit", "predict", "cv", "grid", "oracle", "synth")

DEFAULTS = {
    "dataset": None, "recipe": None, "target": None, "constraint": None,
    "method": "lr", "k": "2", "gamma": "0", "clr": "hard", "weighted": None,
    "n_estimators": "1", "regressor": "ols", "lambda": "0", "classifier": "forest",
    "max_iter": "5", "n_trees": "30", "max_depth": None, "max_features": None,
    "min_samples_split": "2", "min_samples_leaf": "1",
    "folds": 10, "repeats": 5, "seed": 0, "share_labels": False,
    "out": None, "format": "table-text", "jobs": 1,
    "model": None, "input": None, "split": 0.25,
    "scenario": "planted_lines", "k_true": 3, "n": 300, "d": 1, "noise": 0.0,
    "groups_per_cluster": 4, "label_column": None,
    "synthetic": None, "grids": None,
}
# flags whose value may be a comma-separated grid axis
AXIS_FLAGS = ("k", "gamma", "clr", "weighted", "n_estimators", "regressor", "lambda", "classifier",
              "max_iter", "n_trees", "max_depth", "max_features", "min_samples_split", "min_samples_leaf")


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clrpred", description="Clusterwise linear regression toolkit.")
    p.add_argument("--version", action="version", version=f"clrpred {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (default: stdout where applicable)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    data.add_argument("--dataset", help=f"bundled name ({', '.join(BUILTIN_DATASETS)}) or CSV path")
    data.add_argument("--recipe", help="boston, abalone, auto_mpg or generic")
    data.add_argument("--target", help="target column (overrides the recipe)")
    data.add_argument("--constraint", help="constraint column (overrides the recipe)")

    method = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    method.add_argument("--method", choices=[m for m in METHODS if m != "svr_external"])
    method.add_argument("--k")
    method.add_argument("--gamma")
    method.add_argument("--clr", help="hard or soft")
    method.add_argument("--weighted", help="clr_p: true/false; kplane: none/dist/size/inverse_dist")
    method.add_argument("--n-estimators", dest="n_estimators")
    method.add_argument("--regressor", help="ols, ridge or lasso")
    method.add_argument("--lambda", dest="lambda")
    method.add_argument("--classifier", help="logistic or forest")
    method.add_argument("--max-iter", dest="max_iter")
    method.add_argument("--n-trees", dest="n_trees")
    method.add_argument("--max-depth", dest="max_depth")
    method.add_argument("--max-features", dest="max_features")
    method.add_argument("--min-samples-split", dest="min_samples_split")
    method.add_argument("--min-samples-leaf", dest="min_samples_leaf")

    cvp = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    cvp.add_argument("--folds", type=int)
    cvp.add_argument("--repeats", type=int)
    cvp.add_argument("--format", choices=["table-text", "csv", "json"])
    cvp.add_argument("--jobs", type=int)
    cvp.add_argument("--share-labels", dest="share_labels", action="store_true")

    synth = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    synth.add_argument("--scenario", choices=["planted_lines", "indistinguishable_pair", "grouped_mixture"])
    synth.add_argument("--k-true", dest="k_true", type=int)
    synth.add_argument("--n", type=int)
    synth.add_argument("--d", type=int)
    synth.add_argument("--noise", type=float)
    synth.add_argument("--groups-per-cluster", dest="groups_per_cluster", type=int)

    sub.add_parser("fit", parents=[common, data, method], help="fit a model and write it as JSON",
                   argument_default=argparse.SUPPRESS)
    pp = sub.add_parser("predict", parents=[common, data], help="predict a CSV with a saved model",
                        argument_default=argparse.SUPPRESS)
    pp.add_argument("--model")
    pp.add_argument("--input", help="CSV to predict (defaults to --dataset)")
    sub.add_parser("cv", parents=[common, data, method, cvp], help="cross-validate one configuration",
                   argument_default=argparse.SUPPRESS)
    sub.add_parser("grid", parents=[common, data, method, cvp], help="grid search (comma-separated axes)",
                   argument_default=argparse.SUPPRESS)
    po = sub.add_parser("oracle", parents=[common, data, method, synth], help="oracle-label diagnostic",
                        argument_default=argparse.SUPPRESS)
    po.add_argument("--split", type=float, help="held-out fraction")
    ps = sub.add_parser("synth", parents=[common, synth], help="write a synthetic CSV and truth sidecar",
                        argument_default=argparse.SUPPRESS)
    ps.add_argument("--label-column", dest="label_column", help="also write true labels as this column")
    return p


METHOD_AXES = {
    "lr": ("regressor", "lambda"),
    "rf": ("n_trees", "max_depth", "max_features", "min_samples_split", "min_samples_leaf"),
    "clr_c": ("k", "gamma", "n_estimators", "regressor", "lambda", "max_iter"),
    "clr_p": ("k", "gamma", "clr", "weighted", "n_estimators", "regressor", "lambda", "classifier", "max_iter"),
    "kplane": ("k", "gamma", "clr", "weighted", "n_estimators", "regressor", "lambda", "max_iter"),
}


def _load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    cfg = cfg or {}
    if not isinstance(cfg, dict):
        raise UsageError("config must be a mapping")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags."""
    flags = {k: v for k, v in vars(args).items() if k not in ("verb", "config", "verbose")}
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(_load_config(args.config))
    settings.update(flags)
    if settings.get("grids"):
        # axis flags override the matching axis of every configured grid
        grids = []
        for g in settings["grids"]:
            names = METHOD_AXES.get(g.get("method"), ())
            override = {k: _axis_values(k, v) for k, v in flags.items() if k in names}
            grids.append({**g, "axes": {**g.get("axes", {}), **override}})
        settings["grids"] = grids
    return settings


def _parse_scalar(name, text):
    if text is None:
        return None
    if isinstance(text, (int, float, bool)):
        return text
    s = str(text).strip()
    if name in ("k", "n_estimators", "max_iter", "n_trees", "min_samples_split", "min_samples_leaf"):
        return int(s)
    if name in ("gamma", "lambda"):
        return float(s)
    if name == "max_depth":
        return None if s.lower() in ("none", "") else int(s)
    if name == "max_features":
        if s.lower() in ("all", "d", "none"):
            return "all"
        if s in ("sqrt", "log2"):
            return s
        return float(s) if "." in s else int(s)
    if name == "weighted":
        low = s.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        return low
    return s


def _axis_values(name, raw):
    if raw is None:
        return [None]
    if isinstance(raw, list):
        items = raw
    else:
        items = str(raw).split(",") if isinstance(raw, str) else [raw]
    try:
        return [_parse_scalar(name, v) for v in items]
    except ValueError:
        raise UsageError(f"bad value for --{name.replace('_', '-')}: {raw!r}") from None


def _method_axes(settings, method) -> dict:
    axes = {}
    for name in METHOD_AXES[method]:
        values = _axis_values(name, settings.get(name))
        if values == [None]:
            if name == "weighted":
                values = ["none"] if method == "kplane" else [False]
            elif name == "max_depth":
                values = [None]
            else:
                continue
        axes[name] = values
    return axes


def _grids(settings) -> list:
    if settings.get("grids"):
        out = []
        for g in settings["grids"]:
            if "method" not in g:
                raise UsageError("every grid needs a method")
            axes = {k.replace("-", "_"): (v if isinstance(v, list) else [v]) for k, v in g.get("axes", {}).items()}
            out.append(GridSpec(g["method"], {k: [_parse_scalar(k, x) for x in v] for k, v in axes.items()}))
        return out
    method = settings["method"]
    if method not in METHODS or method == "svr_external":
        raise UsageError(f"unknown method {method!r}")
    return [GridSpec(method, _method_axes(settings, method))]


def _load_dataset(settings, path_key="dataset", require_target=True, use_constraint=True) -> tuple[Dataset, str]:
    if settings.get("synthetic") and path_key == "dataset" and settings.get("dataset") is None:
        spec = SyntheticSpec(**settings["synthetic"])
        return generate_synthetic(spec)[0], f"synthetic:{spec.scenario}"
    name = settings.get(path_key)
    if name is None:
        raise UsageError(f"--{path_key} is required")
    recipe = settings.get("recipe")
    if name in BUILTIN_DATASETS:
        path, recipe = builtin_dataset_path(name), recipe or name
    else:
        path, recipe = Path(name), recipe or "generic"
        if not path.exists():
            raise FileNotFoundError(f"dataset not found: {path}")
    try:
        rec = builtin_recipe(recipe)
    except UnknownRecipe as exc:
        raise UsageError(str(exc)) from None
    constraint = settings.get("constraint")
    if not use_constraint:
        rec, constraint = dataclasses.replace(rec, constraint=None), None
    ds = load_csv(path, settings.get("target"), constraint, rec, require_target=require_target)
    return ds, str(name)


def _write(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _provenance(settings, argv) -> dict:
    return {"settings": {k: v for k, v in settings.items() if v is not None}, "seed": settings["seed"],
            "argv": list(argv), "version": __version__}


# ---------------------------------------------------------------------------
# verbs


def cmd_fit(settings, argv):
    ds, name = _load_dataset(settings)
    grids = _grids(settings)
    cells = grids[0].cells()
    if len(grids) != 1 or len(cells) != 1:
        raise UsageError("fit takes exactly one configuration")
    method, params = grids[0].method, cells[0]
    recipe = settings.get("recipe") or (name if name in BUILTIN_DATASETS else "generic")
    scaler = None
    if ds.scale_features:
        scaler = UnitIntervalScaler().fit(ds.X)
        ds = Dataset(scaler.transform(ds.X), ds.y, ds.constraint_ids, list(ds.feature_names), False)
    extra = {
        "features": list(ds.feature_names),
        "scaler": None if scaler is None else scaler.to_dict(),
        "dataset": name,
        "recipe": recipe,
        "target": settings.get("target") or builtin_recipe(recipe).target,
        "constraint": settings.get("constraint") or builtin_recipe(recipe).constraint,
        "params": {"method": method, **params},
        "provenance": _provenance(settings, argv),
    }
    if method == "lr":
        model = fit_linear(ds.X, ds.y, spec=method_config("lr", params).regressor)
        doc = {"format": DOCUMENT_FORMAT, "model": {"type": "linear", "w": model.w.tolist(), "b": model.b},
               **extra}
    elif method == "rf":
        raise UsageError("random-forest baselines cannot be saved; use cv instead")
    else:
        doc = to_document(fit_method(ds, method_config(method, params), settings["seed"]), extra)
    _write(json.dumps(doc, sort_keys=True) + "\n", settings.get("out"))
    return 0


def _align(ds: Dataset, features) -> np.ndarray:
    """Reorder input columns to the model's feature order; absent one-hot
    levels are zero."""
    have = {name: j for j, name in enumerate(ds.feature_names)}
    extra = set(have) - set(features)
    missing = [f for f in features if f not in have and "=" not in f]
    if extra or missing:
        raise DimensionMismatch(
            f"model expects {len(features)} features, input has {ds.d} "
            f"(missing: {sorted(missing)}, unexpected: {sorted(extra)})")
    X = np.zeros((ds.n, len(features)))
    for j, f in enumerate(features):
        if f in have:
            X[:, j] = ds.X[:, have[f]]
    return X


def cmd_predict(settings, argv):
    if settings.get("model") is None:
        raise UsageError("--model is required")
    doc = json.loads(Path(settings["model"]).read_text(encoding="utf-8"))
    if doc.get("format") != DOCUMENT_FORMAT:
        raise InvalidSpec(f"unsupported model document format {doc.get('format')!r}")
    src = dict(settings)
    for key in ("recipe", "target", "constraint"):
        if src.get(key) is None:
            src[key] = doc.get(key)
    src["dataset"] = settings.get("input") or settings.get("dataset")
    ds, _ = _load_dataset(src, require_target=False,
                          use_constraint=doc.get("params", {}).get("method") == "clr_c")
    X = _align(ds, doc["features"])
    if doc.get("scaler"):
        X = UnitIntervalScaler.from_dict(doc["scaler"]).transform(X)
    if doc["model"]["type"] == "linear":
        pred = predict_linear(LinearModel(np.array(doc["model"]["w"]), doc["model"]["b"]), X)
    else:
        pred = from_document(doc).predict(X, ds.constraint_ids)
    lines = ["prediction"] + [repr(float(v)) for v in pred]
    _write("\n".join(lines) + "\n", settings.get("out"))
    if np.any(ds.y != 0):
        log.info("MSE against the target column: %.6g", mse(ds.y, pred))
    return 0


def _run_grid(settings, argv, single):
    ds, name = _load_dataset(settings)
    grids = _grids(settings)
    total = sum(g.size for g in grids)
    if single and total != 1:
        raise UsageError("cv takes exactly one configuration; use grid for several")
    log.info("running %d grid cells", total)
    plan = CvPlan(int(settings["folds"]), int(settings["repeats"]), int(settings["seed"]),
                  bool(settings["share_labels"]))
    report = grid_search(ds, grids, plan, jobs=int(settings["jobs"]), dataset_name=name,
                         progress=lambda i, t, row: log.info("cell %d/%d  MSE %.3f", i, t, row.mse_mean))
    report.meta.update(_provenance(settings, argv))
    _write(emit_report(report, settings["format"]), settings.get("out"))
    return 0


def cmd_cv(settings, argv):
    return _run_grid(settings, argv, single=True)


def cmd_grid(settings, argv):
    return _run_grid(settings, argv, single=False)


def _synthetic_spec(settings) -> SyntheticSpec:
    return SyntheticSpec(settings["scenario"], int(settings["k_true"]), int(settings["n"]), int(settings["d"]),
                         float(settings["noise"]), int(settings["seed"]), int(settings["groups_per_cluster"]))


def cmd_oracle(settings, argv):
    if settings.get("dataset") is None and not settings.get("synthetic"):
        ds = generate_synthetic(_synthetic_spec(settings))[0]
        name = f"synthetic:{settings['scenario']}"
    else:
        ds, name = _load_dataset(settings)
    cfg = method_config("clr_p", {k: _axis_values(k, settings.get(k))[0] for k in
                                  ("k", "gamma", "regressor", "lambda", "classifier", "max_iter")
                                  if settings.get(k) is not None})
    config = HardClrConfig(k=cfg.k, gamma=cfg.gamma, max_iter=cfg.max_iter, seed=int(settings["seed"]),
                           regressor=cfg.regressor)
    row = oracle_label_experiment(ds, float(settings["split"]), config, ClassifierSpec(kind=cfg.classifier.kind))
    doc = {"dataset": name, "row": row, "meta": _provenance(settings, argv)}
    _write(json.dumps(doc, sort_keys=True, indent=2) + "\n", settings.get("out"))
    return 0


def cmd_synth(settings, argv):
    if settings.get("out") is None:
        raise UsageError("synth needs --out for the CSV path")
    spec = _synthetic_spec(settings)
    ds, part, models = generate_synthetic(spec)
    if settings.get("label_column"):
        # true labels as a text constraint column ("c0", "c1", ...); text keeps it out of the features
        ds = Dataset(ds.X, ds.y, np.array([f"c{l}" for l in part.labels]), list(ds.feature_names), False)
        write_csv(settings["out"], ds, constraint_name=settings["label_column"])
    else:
        write_csv(settings["out"], ds)
    write_truth(str(settings["out"]) + ".truth.json", part, models, spec)
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv, "grid": cmd_grid,
            "oracle": cmd_oracle, "synth": cmd_synth}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.verb](settings, argv)
    except (UsageError, InvalidSpec, TypeError) as exc:
        print(f"clrpred {args.verb}: usage error: {exc}", file=sys.stderr)
        return 2
    except (ClrError, ValueError, KeyError, OSError) as exc:
        print(f"clrpred {args.verb}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
