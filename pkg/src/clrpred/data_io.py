"""CSV ingestion, dataset recipes, [-1, 1] scaling and synthetic generators."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .base_regressors import Dataset, LinearModel
from .errors import InvalidSpec, MissingColumn, NonNumericTarget, ParseError, UnknownRecipe
from .hard_clr import Partition

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "NA", "na", "NaN", "nan", "null", "None"})
SCENARIOS = ("planted_lines", "indistinguishable_pair", "grouped_mixture")


@dataclass(frozen=True)
class PreprocessRecipe:
    """Ordered column edits plus an optional [-1, 1] scaling flag.

    Steps are tuples: ``("drop", col)``, ``("one_hot", col)``,
    ``("bin", col, edges, new_col)`` and ``("scale",)``. ``bin`` keeps the
    source column and appends integer bin ids, clipping values outside the
    edges into the first/last bin.
    """

    name: str
    steps: tuple = ()
    target: str | None = None
    constraint: str | None = None

    @property
    def scale(self) -> bool:
        return any(s[0] == "scale" for s in self.steps)


def builtin_recipe(name: str) -> PreprocessRecipe:
    if name == "boston":
        return PreprocessRecipe("boston", (("scale",),), target="MEDV", constraint="RAD")
    if name == "abalone":
        edges = tuple(np.linspace(0.1, 0.2, 11).round(10).tolist())
        return PreprocessRecipe(
            "abalone",
            (("one_hot", "sex"), ("bin", "diameter", edges, "diameter_bin"), ("scale",)),
            target="rings",
            constraint="diameter_bin",
        )
    if name == "auto_mpg":
        return PreprocessRecipe(
            "auto_mpg",
            (("drop", "car_name"), ("one_hot", "origin"), ("scale",)),
            target="mpg",
            constraint="model_year",
        )
    if name == "generic":
        return PreprocessRecipe("generic", (("scale",),))
    raise UnknownRecipe(f"unknown recipe {name!r}")


def _read_rows(path):
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ParseError(f"{path}: empty file", row=1) from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", row=lineno)
                rows.append((lineno, [c.strip() for c in row]))
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8") from exc
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names", row=1)
    return header, rows


def _to_float(text, lineno, column):
    try:
        return float(text)
    except ValueError:
        raise ParseError("non-numeric value " + repr(text), row=lineno, column=column) from None


def load_csv(path, target_column: str | None = None, constraint_column: str | None = None,
             recipe: PreprocessRecipe | str | None = None, require_target: bool = True) -> Dataset:
    """Read a headered comma-separated file and apply the recipe's column steps.

    Rows with a missing feature or target are dropped (logged). A numeric
    constraint column stays a feature and is also returned as string tokens;
    a non-numeric one is returned as tokens only.
    Scaling is only recorded on the dataset; it is fitted per training fold.
    With ``require_target=False`` a file without the target column loads
    with ``y`` set to zeros (prediction inputs).
    """
    if isinstance(recipe, str):
        recipe = builtin_recipe(recipe)
    recipe = recipe or PreprocessRecipe("none")
    target = target_column or recipe.target
    constraint = constraint_column or recipe.constraint
    if target is None:
        if require_target:
            raise MissingColumn("no target column given")
        target = "<target>"
    header, rows = _read_rows(path)

    columns = list(header)
    data = {h: [r[1][i] for r in rows] for i, h in enumerate(header)}
    linenos = [r[0] for r in rows]
    if target not in data:
        if require_target:
            raise MissingColumn(f"target column {target!r} not found")
        data[target] = ["0"] * len(rows)

    categorical = set()
    for step in recipe.steps:
        op = step[0]
        if op == "drop":
            if step[1] not in data:
                raise MissingColumn(f"column {step[1]!r} not found")
            columns.remove(step[1])
            del data[step[1]]
        elif op == "one_hot":
            col = step[1]
            if col not in data:
                raise MissingColumn(f"column {col!r} not found")
            levels = sorted({v for v in data[col] if v not in MISSING_TOKENS}, key=_level_key)
            pos = columns.index(col)
            new_cols = [f"{col}={lvl}" for lvl in levels]
            for lvl, name in zip(levels, new_cols):
                data[name] = ["" if v in MISSING_TOKENS else ("1" if v == lvl else "0") for v in data[col]]
            columns[pos:pos + 1] = new_cols
            del data[col]
            categorical.update(new_cols)
        elif op == "bin":
            col, edges, new_col = step[1], np.asarray(step[2], dtype=float), step[3]
            if col not in data:
                raise MissingColumn(f"column {col!r} not found")
            n_bins = len(edges) - 1
            out = []
            for v, lineno in zip(data[col], linenos):
                if v in MISSING_TOKENS:
                    out.append("")
                    continue
                b = int(np.clip(np.digitize(_to_float(v, lineno, col), edges[1:-1]), 0, n_bins - 1))
                out.append(str(b))
            data[new_col] = out
            columns.append(new_col)
        elif op == "scale":
            pass
        else:
            raise InvalidSpec(f"unknown recipe step {op!r}")

    if constraint is not None and constraint not in data:
        raise MissingColumn(f"constraint column {constraint!r} not found")
    features = [c for c in columns if c != target]
    if constraint in features and not all(_is_number(v) for v in data[constraint] if v not in MISSING_TOKENS):
        features.remove(constraint)  # categorical tokens: constraint only
    keep = [i for i in range(len(rows))
            if data[target][i] not in MISSING_TOKENS
            and all(data[c][i] not in MISSING_TOKENS for c in features)
            and (constraint is None or data[constraint][i] not in MISSING_TOKENS)]
    dropped = len(rows) - len(keep)
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)
    if not keep:
        raise ParseError(f"{path}: no complete rows")

    y = []
    for i in keep:
        try:
            y.append(float(data[target][i]))
        except ValueError:
            raise NonNumericTarget(
                f"target {target!r} is not numeric: {data[target][i]!r} (row {linenos[i]})") from None
    X = np.empty((len(keep), len(features)))
    for j, col in enumerate(features):
        X[:, j] = [_to_float(data[col][i], linenos[i], col) for i in keep]
    ids = None
    if constraint is not None:
        ids = np.array([_token(data[constraint][i]) for i in keep])
    return Dataset(X, np.array(y), ids, features, recipe.scale)


def _is_number(v):
    try:
        float(v)
    except ValueError:
        return False
    return True


def _level_key(v):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def _token(v):
    # "3.0" and "3" name the same group
    try:
        f = float(v)
        return str(int(f)) if f.is_integer() else str(f)
    except ValueError:
        return v


BUILTIN_DATASETS = {"boston": "boston.csv", "abalone": "abalone.csv", "auto_mpg": "auto_mpg.csv"}


def builtin_dataset_path(name: str) -> Path:
    if name not in BUILTIN_DATASETS:
        raise UnknownRecipe(f"no bundled dataset named {name!r}")
    return Path(str(resources.files("clrpred") / "datasets" / BUILTIN_DATASETS[name]))


def load_builtin(name: str) -> Dataset:
    """Load a bundled UCI dataset with its matching recipe."""
    return load_csv(builtin_dataset_path(name), recipe=builtin_recipe(name))


class UnitIntervalScaler:
    """Affine map of each column's training range onto [-1, 1].

    Constant training columns map to 0. Test rows may land outside [-1, 1].
    """

    def __init__(self, lo=None, hi=None):
        self.lo = None if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)

    def fit(self, X):
        X = np.asarray(X, dtype=float)
        self.lo, self.hi = X.min(axis=0), X.max(axis=0)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (X - self.lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["lo"], data["hi"])


def scale_split(train: Dataset, test: Dataset | None = None):
    """Fit scaling on ``train`` only and apply it to both splits."""
    scaler = UnitIntervalScaler().fit(train.X)
    tr = Dataset(scaler.transform(train.X), train.y, train.constraint_ids, list(train.feature_names), False)
    if test is None:
        return tr, None, scaler
    te = Dataset(scaler.transform(test.X), test.y, test.constraint_ids, list(test.feature_names), False)
    return tr, te, scaler


@dataclass(frozen=True)
class SyntheticSpec:
    scenario: str = "planted_lines"
    k_true: int = 3
    n: int = 300
    d: int = 1
    noise_sd: float = 0.0
    seed: int = 0
    groups_per_cluster: int = 4
    extra: dict = field(default_factory=dict)


def generate_synthetic(spec: SyntheticSpec):
    """Draw a dataset with known cluster labels and generating models.

    planted_lines
        ``k_true`` random affine models; point ``j`` belongs to model ``j % k_true``.
    indistinguishable_pair
        ``y = +sum(x)`` or ``y = -sum(x)`` alternating over i.i.d. ``x``, so
        the label carries no information about ``x``.
    grouped_mixture
        ``k_true * groups_per_cluster`` constraint groups; group ``g`` uses
        model ``g % k_true`` and points draw their group uniformly.

    Features are uniform on [-1, 1]. Returns ``(dataset, partition, models)``.
    """
    if spec.scenario not in SCENARIOS:
        raise InvalidSpec(f"unknown scenario {spec.scenario!r}")
    if spec.k_true < 1 or spec.n < spec.k_true or spec.d < 1:
        raise InvalidSpec("need k_true >= 1, d >= 1 and n >= k_true")
    if spec.noise_sd < 0:
        raise InvalidSpec("noise_sd must be non-negative")
    if spec.scenario == "indistinguishable_pair" and spec.k_true != 2:
        raise InvalidSpec("indistinguishable_pair has exactly two models")
    if spec.scenario == "grouped_mixture" and spec.groups_per_cluster < 1:
        raise InvalidSpec("groups_per_cluster must be positive")

    rng = np.random.default_rng(spec.seed)
    n, d, k = spec.n, spec.d, spec.k_true
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    groups = None
    if spec.scenario == "indistinguishable_pair":
        models = [LinearModel(np.ones(d), 0.0), LinearModel(-np.ones(d), 0.0)]
        labels = np.arange(n) % 2
    else:
        models = [LinearModel(rng.normal(0.0, 2.0, size=d), rng.normal(0.0, 1.0)) for _ in range(k)]
        if spec.scenario == "planted_lines":
            labels = np.arange(n) % k
        else:
            m = k * spec.groups_per_cluster
            group_idx = rng.integers(0, m, size=n)
            group_idx[:m] = np.arange(m)  # every group non-empty
            labels = group_idx % k
            groups = np.array([f"g{g}" for g in group_idx])
    W = np.stack([mod.w for mod in models])
    b = np.array([mod.b for mod in models])
    y = np.einsum("jd,jd->j", X, W[labels]) + b[labels]
    if spec.noise_sd > 0:
        y = y + rng.normal(0.0, spec.noise_sd, size=n)
    ds = Dataset(X, y, groups, [f"x{j}" for j in range(d)], False)
    return ds, Partition(labels, k), models


def write_csv(path, dataset: Dataset, constraint_name: str = "group", target_name: str = "y"):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = list(dataset.feature_names) + [target_name]
        if dataset.constraint_ids is not None:
            header.append(constraint_name)
        w.writerow(header)
        for j in range(dataset.n):
            row = [repr(float(v)) for v in dataset.X[j]] + [repr(float(dataset.y[j]))]
            if dataset.constraint_ids is not None:
                row.append(dataset.constraint_ids[j])
            w.writerow(row)


def write_truth(path, partition: Partition, models, spec: SyntheticSpec):
    doc = {
        "spec": {**spec.__dict__},
        "labels": partition.labels.tolist(),
        "models": [{"w": m.w.tolist(), "b": m.b} for m in models],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2))
