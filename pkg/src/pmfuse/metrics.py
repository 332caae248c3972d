"""Evaluation metrics and map statistics.

Point metrics (r, R², MAE, RMSE, MAPE) work on paired reference/prediction
series. Map statistics work on 2-D arrays of cell values where missing cells
are NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedStatisticError

_FSUM_THRESHOLD = 1_000_000


def _sum(a) -> float:
    a = np.asarray(a, dtype=float)
    if a.size > _FSUM_THRESHOLD:
        return math.fsum(a.ravel())
    return float(np.sum(a))


def _mean(a) -> float:
    a = np.asarray(a, dtype=float)
    return _sum(a) / a.size


def _paired(y, y_hat):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise UndefinedStatisticError("empty series")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(y_hat))):
        raise ValueError("series contain non-finite values")
    return y, y_hat


def pearson_r(y, y_hat) -> float:
    y, y_hat = _paired(y, y_hat)
    dy = y - _mean(y)
    dh = y_hat - _mean(y_hat)
    syy = _sum(dy * dy)
    shh = _sum(dh * dh)
    if syy == 0.0 or shh == 0.0:
        raise UndefinedStatisticError("pearson r undefined for a zero-variance series")
    r = _sum(dy * dh) / (math.sqrt(syy) * math.sqrt(shh))
    return max(-1.0, min(1.0, r))


def r_squared(y, y_hat) -> float:
    y, y_hat = _paired(y, y_hat)
    dy = y - _mean(y)
    ss_tot = _sum(dy * dy)
    if ss_tot == 0.0:
        raise UndefinedStatisticError("R^2 undefined for a zero-variance reference")
    res = y - y_hat
    return 1.0 - _sum(res * res) / ss_tot


def mae(y, y_hat) -> float:
    y, y_hat = _paired(y, y_hat)
    return _mean(np.abs(y - y_hat))


def rmse(y, y_hat) -> float:
    y, y_hat = _paired(y, y_hat)
    res = y - y_hat
    return math.sqrt(_mean(res * res))


def mape_with_excluded(y, y_hat):
    """MAPE as a fraction, plus the number of zero-target pairs excluded."""
    y, y_hat = _paired(y, y_hat)
    keep = y != 0.0
    n_excluded = int(np.count_nonzero(~keep))
    if not np.any(keep):
        raise UndefinedStatisticError("MAPE undefined: every target is zero")
    return _mean(np.abs((y[keep] - y_hat[keep]) / y[keep])), n_excluded


def mape(y, y_hat) -> float:
    return mape_with_excluded(y, y_hat)[0]


@dataclass(frozen=True)
class MetricReport:
    n: int
    r: float
    r2: float
    mae: float
    rmse: float
    mape: float
    mape_excluded: int = 0

    CSV_HEADER = "context,n,r,r2,mae,rmse,mape"

    def csv_row(self, context: str) -> str:
        return f"{context},{self.n},{self.r!r},{self.r2!r},{self.mae!r},{self.rmse!r},{self.mape!r}"


def metric_report(y, y_hat) -> MetricReport:
    y, y_hat = _paired(y, y_hat)
    if y.size < 2:
        raise UndefinedStatisticError("a metric report needs at least two pairs")
    m, excl = mape_with_excluded(y, y_hat)
    return MetricReport(
        n=int(y.size),
        r=pearson_r(y, y_hat),
        r2=r_squared(y, y_hat),
        mae=mae(y, y_hat),
        rmse=rmse(y, y_hat),
        mape=m,
        mape_excluded=excl,
    )


def adjacent_variation(slices):
    """Mean and population std (percent) of adjacent-step relative change.

    ``slices`` is an ordered sequence of equally shaped arrays (or objects with
    a ``values`` array). For each step the relative change is averaged over
    cells present in both slices with a positive earlier value; steps without
    any such cell are skipped.

    Returns ``(mean, std, per_step, skipped_steps)``.
    """
    arrays = [np.asarray(getattr(s, "values", s), dtype=float) for s in slices]
    if len(arrays) < 2:
        raise UndefinedStatisticError("adjacent variation needs at least two slices")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("slices must share one grid")
    steps = []
    skipped = []
    for i in range(len(arrays) - 1):
        a, b = arrays[i], arrays[i + 1]
        ok = np.isfinite(a) & np.isfinite(b) & (a > 0)
        if not np.any(ok):
            skipped.append(i)
            continue
        steps.append(_mean(np.abs(b[ok] - a[ok]) / a[ok]) * 100.0)
    if not steps:
        raise UndefinedStatisticError("no step had a valid cell pair")
    v = np.array(steps)
    mean = _mean(v)
    std = math.sqrt(_mean((v - mean) ** 2))
    return mean, std, steps, skipped


def rook_weights(mask):
    """Row-standardised rook contiguity among the True cells of ``mask``.

    Returns ``(index, neighbours)`` where ``index`` lists the flat positions of
    the participating cells and ``neighbours[k]`` the positions (into
    ``index``) of cell k's neighbours.
    """
    mask = np.asarray(mask, dtype=bool)
    n_rows, n_cols = mask.shape
    pos = -np.ones(mask.shape, dtype=np.int64)
    flat = np.flatnonzero(mask)
    pos.ravel()[flat] = np.arange(flat.size)
    neighbours = []
    for idx in flat:
        r, c = divmod(int(idx), n_cols)
        nb = []
        for rr, cc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if 0 <= rr < n_rows and 0 <= cc < n_cols and pos[rr, cc] >= 0:
                nb.append(int(pos[rr, cc]))
        neighbours.append(nb)
    return flat, neighbours


def morans_i(values) -> float:
    """Global Moran's I with rook contiguity, row-standardised.

    ``values`` is a 2-D array; NaN cells are removed from the weight graph.
    Cells left without neighbours keep a zero weight row.
    """
    values = np.asarray(getattr(values, "values", values), dtype=float)
    if values.ndim != 2:
        raise ValueError("morans_i expects a 2-D grid")
    mask = np.isfinite(values)
    flat, neighbours = rook_weights(mask)
    n = flat.size
    if n < 9:
        raise UndefinedStatisticError(f"Moran's I needs at least 9 valued cells, got {n}")
    v = values.ravel()[flat]
    z = v - _mean(v)
    m2 = _sum(z * z)
    if m2 == 0.0:
        raise UndefinedStatisticError("Moran's I undefined for a constant field")
    lag = np.zeros(n)
    s0 = 0.0
    for k, nb in enumerate(neighbours):
        if nb:
            lag[k] = _sum(z[nb]) / len(nb)
            s0 += 1.0
    if s0 == 0.0:
        raise UndefinedStatisticError("no cell has a neighbour")
    return (n / s0) * _sum(z * lag) / m2
