"""Low-cost-sensor calibration against a co-located reference station.

Four correction models are fitted on the same training split:

* ``linear``       ref = a·lcs + b
* ``rh_linear``    ref = j1·lcs + j2·RH + j3
* ``rh_t_linear``  ref = k1·lcs + k2·RH + k3·T + k4
* ``boosted``      ref = gbt(lcs, RH, T)

Calibrated values are clamped to the sensor range before use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import learn
from .errors import EmptyDataError, SingularFitError, UndefinedStatisticError
from .ingest import PM25_RANGE
from .metrics import MetricReport, metric_report, pearson_r

KINDS = ("linear", "rh_linear", "rh_t_linear", "boosted")
KIND_LABELS = {"linear": "(a)", "rh_linear": "(b)", "rh_t_linear": "(c)", "boosted": "(d)"}
KIND_FEATURES = {
    "linear": ("pm25_lcs",),
    "rh_linear": ("pm25_lcs", "rh"),
    "rh_t_linear": ("pm25_lcs", "rh", "temp"),
    "boosted": ("pm25_lcs", "rh", "temp"),
}
COLOCATION_INTERVAL = 300
BOOSTED_DEFAULTS = dict(n_trees=300, depth=4, learning_rate=0.1)
MIN_TRAIN_PAIRS = 10


@dataclass
class CoLocationSet:
    """Interval-averaged LCS readings paired with the reference value."""

    interval_start: np.ndarray
    device_id: np.ndarray
    pm25_lcs: np.ndarray
    rh: np.ndarray
    temp: np.ndarray
    reference: np.ndarray

    def __len__(self):
        return self.reference.size

    def take(self, idx) -> "CoLocationSet":
        return CoLocationSet(*(getattr(self, f)[idx] for f in
                               ("interval_start", "device_id", "pm25_lcs", "rh", "temp", "reference")))

    def features(self, kind: str) -> np.ndarray:
        return np.column_stack([getattr(self, f) for f in KIND_FEATURES[kind]])


def match_colocation(mobile, fixed, interval: int = COLOCATION_INTERVAL, station_id=None) -> CoLocationSet:
    """Pair per-device interval means of LCS readings with the reference mean.

    ``mobile`` and ``fixed`` are ingest tables. Intervals missing either side
    are dropped.
    """
    if station_id is not None:
        keep = fixed.station_id == station_id
        fixed = type(fixed)(fixed.station_id[keep], fixed.t[keep], fixed.pm25[keep])
    if len(mobile) == 0 or len(fixed) == 0:
        raise EmptyDataError("co-location needs both mobile and fixed records")
    fbin = np.asarray(fixed.t, dtype=np.int64) // interval
    ubins, finv = np.unique(fbin, return_inverse=True)
    fsum = np.bincount(finv, weights=fixed.pm25)
    fref = fsum / np.bincount(finv)

    mbin = np.asarray(mobile.t, dtype=np.int64) // interval
    dev = np.asarray(mobile.device_id).astype(str)
    udev, dinv = np.unique(dev, return_inverse=True)
    key = dinv.astype(np.int64) * (mbin.max() + 1 - mbin.min()) + (mbin - mbin.min())
    ukey, kinv = np.unique(key, return_inverse=True)
    cnt = np.bincount(kinv)
    means = [np.bincount(kinv, weights=v) / cnt for v in (mobile.pm25, mobile.rh, mobile.temp)]
    span = mbin.max() + 1 - mbin.min()
    key_dev = ukey // span
    key_bin = ukey % span + mbin.min()

    pos = np.searchsorted(ubins, key_bin)
    pos = np.clip(pos, 0, ubins.size - 1)
    hit = ubins[pos] == key_bin
    if not hit.any():
        raise EmptyDataError("no interval holds both LCS and reference data")
    order = np.lexsort((udev[key_dev[hit]], key_bin[hit]))
    return CoLocationSet(
        (key_bin[hit] * interval)[order],
        udev[key_dev[hit]][order].astype(object),
        means[0][hit][order],
        means[1][hit][order],
        means[2][hit][order],
        fref[pos[hit]][order],
    )


def split(data: CoLocationSet, seed: int, train_fraction: float = 0.8, mode: str = "random"):
    """Deterministic train/test split of matched pairs.

    ``random`` shuffles with ``seed``; ``chronological`` trains on the
    earliest intervals.
    """
    n = len(data)
    n_train = int(round(train_fraction * n))
    if mode == "random":
        perm = np.random.default_rng(seed).permutation(n)
    elif mode == "chronological":
        perm = np.argsort(data.interval_start, kind="stable")
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    return data.take(np.sort(perm[:n_train])), data.take(np.sort(perm[n_train:]))


@dataclass
class CalibrationModel:
    kind: str
    regressor: learn.Regressor

    @property
    def params(self) -> tuple:
        if self.kind == "boosted":
            return ()
        return tuple(float(c) for c in self.regressor.coef) + (self.regressor.intercept,)

    def predict_raw(self, pm25, rh, temp) -> np.ndarray:
        cols = {"pm25_lcs": pm25, "rh": rh, "temp": temp}
        X = np.column_stack([np.asarray(cols[f], dtype=float) for f in KIND_FEATURES[self.kind]])
        return self.regressor.predict(X)

    def apply_arrays(self, pm25, rh, temp) -> np.ndarray:
        return np.clip(self.predict_raw(pm25, rh, temp), *PM25_RANGE)

    def apply_table(self, table):
        """Copy of a mobile table with calibrated ``pm25``."""
        if len(table) == 0:
            return table
        return table.with_pm25(self.apply_arrays(table.pm25, table.rh, table.temp))

    def dumps(self) -> str:
        return f"pmfuse-calibration 1\ncalibration_kind {self.kind}\n" + learn.dumps(self.regressor)

    @classmethod
    def loads(cls, text: str) -> "CalibrationModel":
        lines = text.splitlines()
        if not lines or lines[0].strip() != "pmfuse-calibration 1":
            raise ValueError("not a calibration model file")
        kind = lines[1].split()[1]
        return cls(kind, learn.loads("\n".join(lines[2:])))


def apply(m: CalibrationModel, rec) -> float:
    """Calibrated concentration of one mobile record, clamped to 0-500."""
    return float(m.apply_arrays([rec.pm25_raw], [rec.rh], [rec.temp])[0])


def fit(kind: str, train: CoLocationSet, seed: int = 0, boosted_params=None) -> CalibrationModel:
    if kind not in KINDS:
        raise ValueError(f"unknown calibration kind {kind!r}")
    if len(train) < MIN_TRAIN_PAIRS:
        raise EmptyDataError(f"calibration needs at least {MIN_TRAIN_PAIRS} pairs, got {len(train)}")
    d = learn.Dataset(train.features(kind), train.reference, KIND_FEATURES[kind])
    if kind == "boosted":
        params = dict(BOOSTED_DEFAULTS, **(boosted_params or {}))
        return CalibrationModel(kind, learn.fit_gbt(d, seed=seed, **params))
    try:
        return CalibrationModel(kind, learn.fit_ols(d))
    except SingularFitError as exc:
        raise SingularFitError(f"{kind}: {exc}") from exc


def fit_all(train: CoLocationSet, seed: int = 0, kinds=KINDS, boosted_params=None, executor=None):
    def one(kind):
        return fit(kind, train, seed, boosted_params)

    models = list(executor.map(one, kinds)) if executor is not None else [one(k) for k in kinds]
    return dict(zip(kinds, models))


@dataclass
class CalibrationReport:
    rows: dict  # context -> MetricReport, raw first, then kinds in order

    def to_csv(self) -> str:
        lines = [MetricReport.CSV_HEADER]
        lines += [rep.csv_row(ctx) for ctx, rep in self.rows.items()]
        return "\n".join(lines) + "\n"

    def best_kind(self) -> str:
        cands = [(rep.mae, KINDS.index(k.split()[-1]), k.split()[-1])
                 for k, rep in self.rows.items() if k.split()[-1] in KINDS]
        return min(cands)[2]


def evaluate(models: dict, test: CoLocationSet, include_raw: bool = True) -> CalibrationReport:
    """Held-out metrics per model kind; ``raw`` is the uncalibrated sensor."""
    rows = {}
    if include_raw:
        rows["raw"] = metric_report(test.reference, test.pm25_lcs)
    for kind in KINDS:
        if kind in models:
            pred = models[kind].apply_arrays(test.pm25_lcs, test.rh, test.temp)
            rows[f"{KIND_LABELS[kind]} {kind}"] = metric_report(test.reference, pred)
    return CalibrationReport(rows)


def cross_device_correlation(series: dict):
    """Pearson r matrix over equally long aligned series.

    Returns ``(names, matrix)``; the matrix is symmetric with unit diagonal.
    """
    names = list(series)
    if len(names) < 2:
        raise ValueError("need at least two series")
    arrays = [np.asarray(series[k], dtype=float) for k in names]
    if len({a.size for a in arrays}) != 1:
        raise ValueError("series must share one interval grid")
    k = len(names)
    m = np.eye(k)
    for i in range(k):
        if np.ptp(arrays[i]) == 0:
            raise UndefinedStatisticError(f"series {names[i]!r} has zero variance")
        for j in range(i + 1, k):
            m[i, j] = m[j, i] = pearson_r(arrays[i], arrays[j])
    return names, m


def correlation_csv(names, matrix) -> str:
    lines = ["," + ",".join(names)]
    for n, row in zip(names, matrix):
        lines.append(n + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
