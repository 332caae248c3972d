"""Mapping model: from per-cell mobile statistics and urban features to a
fixed-station-equivalent concentration."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import learn
from .errors import DataError, EmptyDataError, PipelineError
from .geo import CellKey
from .ingest import PM25_RANGE, format_time
from .metrics import mae, mape, pearson_r

MOBILE_FEATURES = ("mean_mobile", "min_mobile", "max_mobile", "n_mobile")
MODEL_KINDS = ("gbt", "forest", "ols", "lasso", "knn", "average")
MODEL_LABELS = {
    "gbt": "Gradient boosting",
    "forest": "Random forest",
    "ols": "Linear regression",
    "lasso": "Lasso",
    "knn": "K nearest neighbors",
    "average": "Average",
}
DEFAULT_MIN_MOBILE = 3
DEFAULT_HYPERPARAMS = {
    "gbt": dict(n_trees=300, depth=4, learning_rate=0.1),
    "forest": dict(n_trees=200, max_depth=8, feature_subsample="sqrt"),
    "knn": dict(k=5),
    "lasso": dict(n_folds=5, n_alphas=20),
}


@dataclass
class TrainingTable:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    cells: list  # station id or CellKey per row
    interval_start: np.ndarray

    def __len__(self):
        return self.y.size

    def dataset(self, rows=None) -> learn.Dataset:
        if rows is None:
            return learn.Dataset(self.X, self.y, self.feature_names)
        return learn.Dataset(self.X[rows], self.y[rows], self.feature_names)


def feature_names(layers) -> tuple:
    return MOBILE_FEATURES + tuple(l.name for l in layers)


def _cell_key(sample, cell_lookup):
    if isinstance(sample.cell, CellKey):
        return sample.cell
    return cell_lookup[sample.cell]


def feature_matrix(samples, layers, cell_lookup=None) -> np.ndarray:
    """One row per sample: mobile stats followed by each layer's cell value."""
    X = np.empty((len(samples), len(MOBILE_FEATURES) + len(layers)))
    for i, s in enumerate(samples):
        key = _cell_key(s, cell_lookup)
        X[i, :4] = (s.mean, s.min, s.max, s.n_mobile)
        for j, layer in enumerate(layers):
            X[i, 4 + j] = layer.values[key.row, key.col]
    return X


def _sort_key(sample):
    c = sample.cell
    return (str(c) if not isinstance(c, CellKey) else f"~{c.row:09d}:{c.col:09d}", sample.time.interval_start)


def build_table(samples, layers, cell_lookup=None, min_mobile: int = DEFAULT_MIN_MOBILE) -> TrainingTable:
    """Training rows from samples carrying a fixed value and enough mobile readings.

    ``cell_lookup`` maps station ids to the grid cell holding the station, so
    urban features come from the station's cell.
    """
    eligible = [s for s in samples if s.fixed_value is not None and s.n_mobile >= min_mobile]
    if not eligible:
        raise EmptyDataError("no sample has both a fixed value and enough mobile readings")
    eligible.sort(key=_sort_key)
    return TrainingTable(
        feature_matrix(eligible, layers, cell_lookup),
        np.array([s.fixed_value for s in eligible], dtype=float),
        feature_names(layers),
        [s.cell for s in eligible],
        np.array([s.time.interval_start for s in eligible], dtype=np.int64),
    )


def independent_columns(X, tol: float = 1e-8) -> np.ndarray:
    """Mask of columns kept by a greedy left-to-right rank test on ``[1, X]``.

    Columns are standardised first, so the tolerance is relative. Constant
    columns and columns that are (numerically) linear combinations of earlier
    ones are dropped.
    """
    X = np.asarray(X, dtype=float)
    keep = np.zeros(X.shape[1], dtype=bool)
    sd = X.std(axis=0)
    Z = np.column_stack([np.ones(X.shape[0]), (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)])
    basis = Z[:, :1] / np.linalg.norm(Z[:, 0])
    for j in range(X.shape[1]):
        if sd[j] == 0:
            continue
        v = Z[:, j + 1] - basis @ (basis.T @ Z[:, j + 1])
        v = v - basis @ (basis.T @ v)
        nv = np.linalg.norm(v)
        if nv > tol * np.linalg.norm(Z[:, j + 1]):
            basis = np.column_stack([basis, v / nv])
            keep[j] = True
    return keep


def _fit_ols_reduced(d: learn.Dataset) -> learn.LinearModel:
    keep = independent_columns(d.X)
    sub = learn.Dataset(d.X[:, keep], d.y, tuple(n for n, k in zip(d.feature_names, keep) if k))
    m = learn.fit_ols(sub)
    coef = np.zeros(d.n_features)
    coef[keep] = m.coef
    return learn.LinearModel("ols", d.feature_names, m.intercept, coef)


def fit_kind(kind: str, d: learn.Dataset, seed: int = 0, hyperparams=None) -> learn.Regressor:
    """Fit one mapping-model kind with default or overridden hyperparameters.

    Least squares only sees columns that are not constant and not linear
    combinations of earlier columns over the training rows (the rest get a
    zero coefficient); all-zero layers or land-cover shares that sum to the
    cell area would otherwise make the design singular.
    """
    hp = dict(DEFAULT_HYPERPARAMS.get(kind, {}), **((hyperparams or {}).get(kind, {})))
    if kind == "gbt":
        return learn.fit_gbt(d, seed=seed, **hp)
    if kind == "forest":
        return learn.fit_forest(d, seed=seed, **hp)
    if kind == "ols":
        return _fit_ols_reduced(d)
    if kind == "lasso":
        return learn.fit_lasso_cv(d, seed=seed, **hp)
    if kind == "knn":
        return learn.fit_knn(d, **hp)
    if kind == "average":
        return learn.fit_average(d, "mean_mobile")
    raise ValueError(f"unknown model kind {kind!r}")


def fold_ids(t: TrainingTable, seed: int, n_folds: int = 5, scheme: str = "kfold") -> np.ndarray:
    """Fold of each row: a seeded hash of (cell, interval) or one fold per station."""
    if scheme == "loso":
        names = sorted({str(c) for c in t.cells})
        index = {n: i for i, n in enumerate(names)}
        return np.array([index[str(c)] for c in t.cells], dtype=np.int64)
    if scheme != "kfold":
        raise ValueError(f"unknown CV scheme {scheme!r}")
    out = np.empty(len(t), dtype=np.int64)
    for i, (c, s) in enumerate(zip(t.cells, t.interval_start)):
        h = hashlib.blake2b(f"{seed}|{c}|{int(s)}".encode(), digest_size=8).digest()
        out[i] = int.from_bytes(h, "big") % n_folds
    return out


@dataclass
class KindResult:
    kind: str
    mae: float = math.nan
    mape: float = math.nan
    r: float = math.nan
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class ModelComparison:
    results: dict  # kind -> KindResult, in report order
    folds: np.ndarray
    protocol: str
    predictions: dict = field(default_factory=dict)  # kind -> pooled out-of-fold predictions

    @property
    def best(self) -> str:
        ok = [(r.mae, MODEL_KINDS.index(k) if k in MODEL_KINDS else 99, k)
              for k, r in self.results.items() if not r.failed]
        if not ok:
            raise DataError("every model kind failed")
        return min(ok)[2]

    def to_csv(self) -> str:
        lines = [f"# protocol: {self.protocol}", "model,mae,mape,r"]
        for k, r in self.results.items():
            if r.failed:
                lines.append(f"{k},failed,failed,failed")
            else:
                lines.append(f"{k},{r.mae!r},{r.mape!r},{r.r!r}")
        lines.append(f"# best: {self.best}")
        return "\n".join(lines) + "\n"


def compare_models(t: TrainingTable, seed: int, kinds=MODEL_KINDS, n_folds: int = 5, scheme: str = "kfold",
                   hyperparams=None, model_seed: int | None = None, executor=None) -> ModelComparison:
    """Cross-validate every kind on identical folds; metrics pooled over folds."""
    if len(t) < 50:
        raise EmptyDataError(f"model comparison needs at least 50 rows, got {len(t)}")
    folds = fold_ids(t, seed, n_folds, scheme)
    fold_values = np.unique(folds)
    model_seed = seed if model_seed is None else model_seed

    def run_fold(kind, f):
        test = folds == f
        m = fit_kind(kind, t.dataset(~test), model_seed, hyperparams)
        return m.predict(t.X[test])

    results, preds = {}, {}
    for kind in kinds:
        jobs = list(fold_values)
        try:
            if executor is not None:
                outs = list(executor.map(lambda f: run_fold(kind, f), jobs))
            else:
                outs = [run_fold(kind, f) for f in jobs]
            pred = np.empty(len(t))
            for f, o in zip(jobs, outs):
                pred[folds == f] = o
            results[kind] = KindResult(kind, mae(t.y, pred), mape(t.y, pred), pearson_r(t.y, pred))
            preds[kind] = pred
        except PipelineError as exc:
            results[kind] = KindResult(kind, error=f"{type(exc).__name__}: {exc}")
    if scheme == "kfold":
        protocol = f"{n_folds}-fold cross-validation, folds by seeded row hash (seed={seed}), metrics pooled over folds"
    else:
        protocol = "leave-one-station-out cross-validation, metrics pooled over folds"
    return ModelComparison(results, folds, protocol, preds)


@dataclass(frozen=True)
class MappedValue:
    cell: CellKey
    interval_start: int
    interval_len: int
    pm25: float


def predict_mapped(model: learn.Regressor, samples, layers, min_mobile: int = DEFAULT_MIN_MOBILE):
    """Mapped concentration for every tessellation sample meeting the floor."""
    eligible = [s for s in samples if s.n_mobile >= min_mobile]
    if not eligible:
        return []
    X = feature_matrix(eligible, layers)
    pred = np.clip(model.predict(X), *PM25_RANGE)
    return [MappedValue(s.cell, s.time.interval_start, s.time.interval_len, float(v))
            for s, v in zip(eligible, pred)]


def mapped_csv(values) -> str:
    lines = ["col,row,interval_start,pm25,source"]
    starts = format_time([v.interval_start for v in values]) if values else []
    for v, ts in zip(values, starts):
        lines.append(f"{v.cell.col},{v.cell.row},{ts},{v.pm25!r},mapped")
    return "\n".join(lines) + "\n"


def read_mapped_csv(path, interval_len: int):
    import pandas as pd

    from .ingest import parse_time

    df = pd.read_csv(path, dtype={"col": np.int64, "row": np.int64, "interval_start": str, "pm25": float},
                     float_precision="round_trip")
    starts = parse_time(df["interval_start"].to_numpy(dtype=object))
    return [MappedValue(CellKey(int(c), int(r)), int(s), interval_len, float(v))
            for c, r, s, v in zip(df["col"], df["row"], starts, df["pm25"])]


def gain_report(model: learn.Regressor):
    """Features ranked by descending total gain; ties broken by name."""
    table = model.gain_table()
    return sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))


def gain_csv(ranked) -> str:
    lines = ["rank,feature,gain"]
    for i, (name, g) in enumerate(ranked, start=1):
        lines.append(f"{i},{name},{g!r}")
    return "\n".join(lines) + "\n"
