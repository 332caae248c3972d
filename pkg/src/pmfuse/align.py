"""Spatio-temporal bucketing of mobile readings and the resolution sweep.

Buckets are keyed by (cell, floor(t / interval)). A cell is either a
station-centred square (keyed by station id; overlapping squares each get
the record) or a tessellation cell (keyed by :class:`CellKey`).
Per-bucket summaries are (count, sum, min, max), which merge exactly, so input
can be streamed in shards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import SelectionError, UndefinedStatisticError
from .geo import CellKey, GridSpec, StationCell, in_station_cell_arrays, project_arrays, station_cells
from .metrics import pearson_r

SWEEP_DISTANCES = (500.0, 1000.0, 2000.0)
SWEEP_INTERVALS = (300, 600, 1800, 3600)
SWEEP_TOLERANCE = 0.02
SWEEP_MIN_PAIRS = 10


@dataclass(frozen=True, order=True)
class TimeKey:
    interval_start: int
    interval_len: int

    def __post_init__(self):
        if self.interval_start % self.interval_len:
            raise ValueError("interval_start must be a multiple of interval_len")


def time_key(t: int, interval: int) -> TimeKey:
    return TimeKey((int(t) // interval) * interval, interval)


@dataclass(frozen=True)
class BucketStats:
    n: int
    total: float
    min: float
    max: float

    @property
    def mean(self) -> float:
        return min(self.max, max(self.min, self.total / self.n))

    def merge(self, other: "BucketStats") -> "BucketStats":
        return BucketStats(self.n + other.n, self.total + other.total,
                           min(self.min, other.min), max(self.max, other.max))

    @classmethod
    def of(cls, values) -> "BucketStats":
        v = np.asarray(values, dtype=float)
        return cls(int(v.size), float(v.sum()), float(v.min()), float(v.max()))


@dataclass(frozen=True)
class CellSample:
    cell: object  # station id (str) or CellKey
    time: TimeKey
    n_mobile: int
    mean: float
    min: float
    max: float
    fixed_value: float | None = None


def _reduce(cell, tbin, n, total, vmin, vmax):
    """Collapse rows sharing (cell, tbin); output sorted by (cell, tbin)."""
    if cell.size == 0:
        return cell, tbin, n, total, vmin, vmax
    order = np.lexsort((tbin, cell))
    cell, tbin, n, total, vmin, vmax = (a[order] for a in (cell, tbin, n, total, vmin, vmax))
    start = np.flatnonzero(np.r_[True, (cell[1:] != cell[:-1]) | (tbin[1:] != tbin[:-1])])
    return (
        cell[start],
        tbin[start],
        np.add.reduceat(n, start),
        np.add.reduceat(total, start),
        np.minimum.reduceat(vmin, start),
        np.maximum.reduceat(vmax, start),
    )


class StreamingAggregator:
    """Single-pass (count, sum, min, max) accumulator keyed by integer cell code.

    Call :meth:`add` once per shard; partial summaries are compacted whenever
    they grow past ``compact_at`` rows. :meth:`merge` combines two
    aggregators with the same interval.
    """

    def __init__(self, interval: int, compact_at: int = 2_000_000):
        self.interval = int(interval)
        self.compact_at = compact_at
        self._parts = []
        self._rows = 0

    def add(self, cell_codes, t, values):
        cell = np.asarray(cell_codes, dtype=np.int64)
        if cell.size == 0:
            return
        tbin = np.asarray(t, dtype=np.int64) // self.interval
        v = np.asarray(values, dtype=float)
        part = _reduce(cell, tbin, np.ones(cell.size, dtype=np.int64), v, v, v)
        self._parts.append(part)
        self._rows += part[0].size
        if self._rows > self.compact_at:
            self._compact()

    def _compact(self):
        if len(self._parts) > 1:
            cat = [np.concatenate([p[i] for p in self._parts]) for i in range(6)]
            self._parts = [_reduce(*cat)]
        self._rows = self._parts[0][0].size if self._parts else 0

    def merge(self, other: "StreamingAggregator") -> "StreamingAggregator":
        if other.interval != self.interval:
            raise ValueError("cannot merge aggregators with different intervals")
        out = StreamingAggregator(self.interval, self.compact_at)
        out._parts = list(self._parts) + list(other._parts)
        out._compact()
        return out

    def arrays(self):
        """``(cell, interval_start, n, total, min, max)`` sorted by cell then time."""
        self._compact()
        if not self._parts:
            e = np.array([], dtype=np.int64)
            return e, e, e, np.array([]), np.array([]), np.array([])
        cell, tbin, n, total, vmin, vmax = self._parts[0]
        return cell, tbin * self.interval, n, total, vmin, vmax


def _samples_from(agg: StreamingAggregator, labels):
    cell, start, n, total, vmin, vmax = agg.arrays()
    out = []
    for c, s, k, tot, lo, hi in zip(cell, start, n, total, vmin, vmax):
        stats = BucketStats(int(k), float(tot), float(lo), float(hi))
        out.append(CellSample(labels(int(c)), TimeKey(int(s), agg.interval), stats.n, stats.mean, stats.min, stats.max))
    return out


def station_codes(x, y, cells):
    """Expand points into (point index, station index) membership pairs."""
    pts, sts = [], []
    for k, c in enumerate(cells):
        idx = np.flatnonzero(in_station_cell_arrays(x, y, c))
        pts.append(idx)
        sts.append(np.full(idx.size, k, dtype=np.int64))
    if not pts:
        return np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    return np.concatenate(pts), np.concatenate(sts)


def add_to_aggregator(agg: StreamingAggregator, x, y, t, values, cells):
    """Feed one shard of projected points into ``agg``."""
    if isinstance(cells, GridSpec):
        col, row, inside = cells.cell_indices(x, y)
        agg.add((row * cells.n_cols + col)[inside], np.asarray(t)[inside], np.asarray(values)[inside])
    else:
        pi, si = station_codes(x, y, cells)
        agg.add(si, np.asarray(t)[pi], np.asarray(values)[pi])


def cell_labeler(cells):
    if isinstance(cells, GridSpec):
        return cells.key_of_linear
    ids = [c.station_id for c in cells]
    return lambda k: ids[k]


def aggregate(mobile, cells, interval: int, ref=None):
    """Bucket calibrated mobile readings into :class:`CellSample` rows.

    ``mobile`` is a :class:`~pmfuse.ingest.MobileTable` (``pm25`` already
    calibrated). ``cells`` is a list of :class:`StationCell` or a
    :class:`GridSpec`; ``ref`` defaults to the grid's projection reference.
    """
    if ref is None:
        if not isinstance(cells, GridSpec):
            raise ValueError("ref is required with station cells")
        ref = cells.ref
    agg = StreamingAggregator(interval)
    if len(mobile):
        x, y = project_arrays(mobile.lat, mobile.lon, ref)
        add_to_aggregator(agg, x, y, mobile.t, mobile.pm25, cells)
    return _samples_from(agg, cell_labeler(cells))


def fixed_means(fixed, interval: int) -> dict:
    """Mean fixed value per (station_id, interval_start)."""
    sums = {}
    starts = (np.asarray(fixed.t, dtype=np.int64) // interval) * interval
    for sid, s, v in zip(fixed.station_id, starts, fixed.pm25):
        key = (str(sid), int(s))
        acc = sums.get(key)
        if acc is None:
            sums[key] = [float(v), 1]
        else:
            acc[0] += float(v)
            acc[1] += 1
    return {k: tot / n for k, (tot, n) in sums.items()}


def join_fixed(samples, fixed, interval: int):
    """Attach the interval-mean fixed value to station-keyed samples."""
    means = fixed_means(fixed, interval)
    out = []
    for s in samples:
        if s.time.interval_len != interval:
            raise ValueError("sample interval does not match")
        v = means.get((s.cell, s.time.interval_start)) if isinstance(s.cell, str) else None
        out.append(replace(s, fixed_value=v))
    return out


@dataclass
class SweepResult:
    distances: tuple
    intervals: tuple
    r: np.ndarray  # (n_distances, n_intervals), NaN where invalid
    n_pairs: np.ndarray
    chosen: tuple  # (distance, interval)
    tolerance: float = SWEEP_TOLERANCE
    notes: tuple = ()

    def to_csv(self) -> str:
        head = "distance_m," + ",".join(f"{i // 60}min" for i in self.intervals)
        lines = [head]
        for d, row in zip(self.distances, self.r):
            lines.append(f"{d:g}," + ",".join(repr(float(v)) for v in row))
        lines.append(f"chosen,{self.chosen[0]:g},{self.chosen[1]}")
        return "\n".join(lines) + "\n"

    def pairs_csv(self) -> str:
        head = "distance_m," + ",".join(f"{i // 60}min" for i in self.intervals)
        lines = [head]
        for d, row in zip(self.distances, self.n_pairs):
            lines.append(f"{d:g}," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def read_sweep_choice(path):
    """``(distance_m, interval_s)`` from the footer of a sweep CSV."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("chosen,"):
                _, d, i = line.strip().split(",")
                return float(d), int(i)
    raise ValueError(f"{path}: no chosen line")


def sweep_pairs(mobile, fixed, stations, ref, distance, interval):
    """(mean mobile, fixed) pairs for one sweep point, in sample order."""
    cells = station_cells(stations, ref, distance)
    samples = join_fixed(aggregate(mobile, cells, interval, ref), fixed, interval)
    mob = np.array([s.mean for s in samples if s.fixed_value is not None])
    fix = np.array([s.fixed_value for s in samples if s.fixed_value is not None])
    return mob, fix


def select_resolution(distances, intervals, r, n_pairs, tolerance=SWEEP_TOLERANCE, min_pairs=SWEEP_MIN_PAIRS):
    """Finest (distance, then interval) point within ``tolerance`` of the best r."""
    valid = np.isfinite(r) & (n_pairs >= min_pairs)
    if not valid.any():
        raise SelectionError("no sweep point has a defined correlation")
    best = float(np.max(r[valid]))
    order = sorted(((d, i, a, b) for a, d in enumerate(distances) for b, i in enumerate(intervals)))
    for d, i, a, b in order:
        if valid[a, b] and r[a, b] >= best - tolerance:
            return d, i
    raise SelectionError("selection rule matched nothing")  # unreachable: best itself qualifies


def resolution_sweep(mobile, fixed, stations, ref, distances=SWEEP_DISTANCES, intervals=SWEEP_INTERVALS,
                     tolerance=SWEEP_TOLERANCE, min_pairs=SWEEP_MIN_PAIRS, executor=None) -> SweepResult:
    """Correlate station values with nearby mobile means across resolutions."""
    points = [(a, b, d, i) for a, d in enumerate(distances) for b, i in enumerate(intervals)]

    def run(point):
        a, b, d, i = point
        mob, fix = sweep_pairs(mobile, fixed, stations, ref, d, i)
        try:
            r = pearson_r(mob, fix) if mob.size >= 2 else math.nan
        except UndefinedStatisticError:
            r = math.nan
        return a, b, r, mob.size

    results = list(executor.map(run, points)) if executor is not None else [run(p) for p in points]
    r = np.full((len(distances), len(intervals)), math.nan)
    n = np.zeros((len(distances), len(intervals)), dtype=np.int64)
    notes = []
    for a, b, rv, k in results:
        n[a, b] = k
        if k < min_pairs:
            notes.append(f"{distances[a]:g}m/{intervals[b]}s: only {k} pairs")
            continue
        if not math.isfinite(rv):
            notes.append(f"{distances[a]:g}m/{intervals[b]}s: correlation undefined")
        r[a, b] = rv
    chosen = select_resolution(distances, intervals, r, n, tolerance, min_pairs)
    return SweepResult(tuple(distances), tuple(intervals), r, n, chosen, tolerance, tuple(notes))
