"""Pollution-map products and their statistics.

Three products share one construction: inverse-distance weighting of point
values onto cell centres.

* ``fixed``  - station values of the interval
* ``mobile`` - mean mobile reading of each observed cell, placed at its centre
* ``mapped`` - mapped cell values plus station values; where a station sits in
  a mapped cell, the station value replaces the mapped one
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataError, UndefinedStatisticError
from .geo import CellKey, GridSpec
from .ingest import format_time
from .metrics import adjacent_variation, morans_i

SOURCES = ("fixed", "mobile", "mapped")
SINGULARITY_M = 1.0
DEFAULT_POWER = 2.0


@dataclass
class PollutionMap:
    grid: GridSpec
    time: object  # TimeKey or None
    values: np.ndarray  # (n_rows, n_cols), interpolated
    source: str
    observed: np.ndarray | None = None  # pre-interpolation cell values, NaN elsewhere

    @property
    def coverage(self) -> float:
        if self.observed is None:
            return 1.0
        return float(np.count_nonzero(np.isfinite(self.observed))) / self.observed.size


def idw_at(xs, ys, vs, qx, qy, power: float = DEFAULT_POWER, k: int | None = None) -> np.ndarray:
    """IDW estimates at query points.

    Every source contributes unless ``k`` limits it to the k nearest. A query
    within 1 m of a source takes that source's value (the nearest, lowest
    index first).
    """
    xs, ys, vs = (np.asarray(a, dtype=float).ravel() for a in (xs, ys, vs))
    qx, qy = np.asarray(qx, dtype=float).ravel(), np.asarray(qy, dtype=float).ravel()
    if xs.size == 0:
        raise EmptyDataError("IDW needs at least one source point")
    out = np.empty(qx.size)
    if k is not None and k < xs.size:
        from scipy.spatial import cKDTree

        dist, idx = cKDTree(np.column_stack([xs, ys])).query(np.column_stack([qx, qy]), k=k)
        dist, idx = dist.reshape(qx.size, -1), idx.reshape(qx.size, -1)
        vals = vs[idx]
    else:
        step = max(1, 2_000_000 // xs.size)
        for s in range(0, qx.size, step):
            d = np.hypot(qx[s:s + step, None] - xs[None, :], qy[s:s + step, None] - ys[None, :])
            out[s:s + step] = _idw_rows(d, np.broadcast_to(vs, d.shape), power)
        return out
    return _idw_rows(dist, vals, power)


def _idw_rows(d, vals, power):
    nearest = np.argmin(d, axis=1)
    rows = np.arange(d.shape[0])
    dmin = d[rows, nearest]
    snap = dmin < SINGULARITY_M
    with np.errstate(divide="ignore"):
        w = np.where(snap[:, None], 0.0, d ** (-power))
    est = (w * vals).sum(axis=1) / np.where(snap, 1.0, w.sum(axis=1))
    # a convex combination cannot leave the source range; remove rounding excursions
    est = np.clip(est, vals.min(axis=1), vals.max(axis=1))
    est[snap] = vals[rows[snap], nearest[snap]]
    return est


def idw(points, targets: GridSpec, power: float = DEFAULT_POWER, k: int | None = None,
        time=None, source=None) -> PollutionMap:
    """Interpolate ``[(ProjectedPoint, value), ...]`` onto the cell centres of ``targets``."""
    if not points:
        raise EmptyDataError("IDW needs at least one source point")
    xs = np.array([p.x for p, _ in points])
    ys = np.array([p.y for p, _ in points])
    vs = np.array([v for _, v in points], dtype=float)
    cx, cy = targets.centers()
    vals = idw_at(xs, ys, vs, cx, cy, power, k).reshape(cx.shape)
    return PollutionMap(targets, time, vals, source)


def _observed(grid, xs, ys, vs):
    obs_sum = np.zeros((grid.n_rows, grid.n_cols))
    obs_n = np.zeros((grid.n_rows, grid.n_cols))
    col, row, inside = grid.cell_indices(xs, ys)
    np.add.at(obs_sum, (row[inside], col[inside]), vs[inside])
    np.add.at(obs_n, (row[inside], col[inside]), 1)
    with np.errstate(invalid="ignore"):
        return np.where(obs_n > 0, obs_sum / np.where(obs_n > 0, obs_n, 1), np.nan)


def build_map(source: str, grid: GridSpec, time, stations=(), mobile=(), mapped=(),
              power: float = DEFAULT_POWER, k: int | None = None) -> PollutionMap:
    """Build one map product for one interval.

    ``stations`` holds ``(ProjectedPoint, value)`` pairs with the interval's
    fixed values, ``mobile`` the interval's tessellation :class:`CellSample`
    rows, ``mapped`` the interval's :class:`MappedValue` rows.
    """
    if source == "fixed":
        pts = [(p.x, p.y, v) for p, v in stations]
    elif source == "mobile":
        pts = []
        for s in mobile:
            c = grid.cell_center(s.cell)
            pts.append((c.x, c.y, s.mean))
    elif source == "mapped":
        station_cells = set()
        for p, _ in stations:
            col, row, inside = grid.cell_indices(np.array([p.x]), np.array([p.y]))
            if inside[0]:
                station_cells.add(CellKey(int(col[0]), int(row[0])))
        pts = []
        for m in mapped:
            if m.cell in station_cells:
                continue
            c = grid.cell_center(m.cell)
            pts.append((c.x, c.y, m.pm25))
        pts.extend((p.x, p.y, v) for p, v in stations)
    else:
        raise ValueError(f"unknown map source {source!r}")
    if not pts:
        raise EmptyDataError(f"no {source} inputs for interval {time}")
    arr = np.array(pts, dtype=float)
    cx, cy = grid.centers()
    vals = idw_at(arr[:, 0], arr[:, 1], arr[:, 2], cx, cy, power, k).reshape(cx.shape)
    return PollutionMap(grid, time, vals, source, _observed(grid, arr[:, 0], arr[:, 1], arr[:, 2]))


@dataclass
class MapStats:
    source: str
    interval_start: int | None
    mean: float
    std: float
    coverage: float
    morans_i: float
    morans_i_observed: float
    morans_i_interpolated: float

    CSV_HEADER = "source,interval_start,mean,std,coverage,morans_i,morans_i_observed,morans_i_interpolated"

    def csv_row(self) -> str:
        ts = format_time([self.interval_start])[0] if self.interval_start is not None else ""
        return (f"{self.source},{ts},{self.mean!r},{self.std!r},{self.coverage!r},"
                f"{self.morans_i!r},{self.morans_i_observed!r},{self.morans_i_interpolated!r}")


def _safe_morans(values) -> float:
    try:
        return morans_i(values)
    except UndefinedStatisticError:
        return math.nan


def slice_stats(m: PollutionMap) -> MapStats:
    v = m.values[np.isfinite(m.values)]
    mean = float(v.mean())
    std = float(math.sqrt(np.mean((v - mean) ** 2)))
    cov = m.coverage
    mi_obs = _safe_morans(m.observed) if m.observed is not None else math.nan
    mi_int = _safe_morans(m.values)
    start = m.time.interval_start if m.time is not None else None
    return MapStats(m.source, start, mean, std, cov, mi_obs if cov < 1.0 else mi_int, mi_obs, mi_int)


@dataclass
class SeriesStats:
    source: str
    slices: list
    variation_mean: float
    variation_std: float
    skipped_steps: tuple

    @property
    def mean(self) -> float:
        return float(np.mean([s.mean for s in self.slices]))

    @property
    def std(self) -> float:
        return float(np.std([s.mean for s in self.slices]))


def map_stats(maps) -> SeriesStats:
    """Per-slice statistics plus the adjacent temporal variation of the series."""
    maps = list(maps)
    if not maps:
        raise EmptyDataError("no maps")
    slices = [slice_stats(m) for m in maps]
    if len(maps) >= 2:
        vm, vs, _, skipped = adjacent_variation([m.values for m in maps])
    else:
        vm, vs, skipped = math.nan, math.nan, []
    return SeriesStats(maps[0].source, slices, vm, vs, tuple(skipped))


def bias_percent(a, b) -> float:
    """``100·(mean(a) - mean(b)) / mean(b)`` over a common time range."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("series must be equally long and nonempty")
    mb = float(np.mean(b))
    if mb == 0.0:
        raise UndefinedStatisticError("reference mean is zero")
    return 100.0 * (float(np.mean(a)) - mb) / mb


def bias_report(map_means: dict) -> dict:
    """Percent differences between the per-source map-mean series."""
    out = {}
    for a, b in (("mapped", "fixed"), ("mapped", "mobile"), ("mobile", "fixed")):
        if a in map_means and b in map_means:
            out[f"{a}_vs_{b}"] = bias_percent(map_means[a], map_means[b])
    return out


def map_filename(source: str, interval_start: int, interval_len: int) -> str:
    ts = format_time([interval_start])[0].replace("-", "").replace(":", "")
    return f"map_{source}_{ts}_{interval_len}.csv"


def map_csv(m: PollutionMap) -> str:
    lines = ["col,row,pm25"]
    for r in range(m.grid.n_rows):
        for c in range(m.grid.n_cols):
            lines.append(f"{c},{r},{float(m.values[r, c])!r}")
    return "\n".join(lines) + "\n"


def read_map_csv(path, grid: GridSpec, source: str, time=None) -> PollutionMap:
    vals = np.full((grid.n_rows, grid.n_cols), np.nan)
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            c, r, v = line.strip().split(",")
            vals[int(r), int(c)] = float(v)
    return PollutionMap(grid, time, vals, source)


def write_png(m: PollutionMap, path, vmin: float = 0.0, vmax: float = 150.0) -> None:
    """Grayscale PNG, one pixel per cell, south edge at the bottom.

    Values map linearly from ``vmin`` (black) to ``vmax`` (white) and are
    clipped outside that range.
    """
    from PIL import Image

    scaled = np.clip((m.values - vmin) / (vmax - vmin), 0.0, 1.0)
    pix = np.nan_to_num(scaled * 255.0).round().astype(np.uint8)[::-1]
    Image.fromarray(pix, mode="L").save(path, format="PNG")
