"""CSV readers, quality control and urban-feature rasterisation.

Readers are columnar and chunked: :func:`iter_mobile` streams fixed-size
batches so tens of millions of records never need to be materialised. The
record-list loaders are thin conveniences over the same path.

Quality control keeps PM2.5 within the sensor's 0-500 µg/m³ range for both
streams, and for mobile rows additionally the relative humidity within
0-100 % and temperature within -10-60 °C.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pacsv

from .errors import ConfigError, IngestError
from .geo import GeoPoint, GridSpec, project_arrays

PM25_RANGE = (0.0, 500.0)
RH_RANGE = (0.0, 100.0)
TEMP_RANGE = (-10.0, 60.0)

FIXED_COLUMNS = ("station_id", "timestamp", "pm25")
MOBILE_COLUMNS = ("device_id", "timestamp", "lat", "lon", "pm25", "rh", "temp")
STATION_COLUMNS = ("station_id", "lat", "lon")

TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
DEFAULT_CHUNK = 500_000

LAYER_NAME = re.compile(r"^(?:(?:land_cover|land_use|road_length)\.[A-Za-z0-9_]+|building_area)$")


@dataclass(frozen=True)
class FixedRecord:
    station_id: str
    t: int
    pm25: float


@dataclass(frozen=True)
class MobileRecord:
    device_id: str
    t: int
    pos: GeoPoint
    pm25_raw: float
    rh: float
    temp: float


@dataclass(frozen=True)
class StationInfo:
    station_id: str
    pos: GeoPoint


@dataclass
class FixedTable:
    station_id: np.ndarray
    t: np.ndarray
    pm25: np.ndarray

    def __len__(self):
        return self.t.size

    def records(self):
        return [FixedRecord(str(s), int(t), float(v)) for s, t, v in zip(self.station_id, self.t, self.pm25)]

    @classmethod
    def from_records(cls, recs):
        return cls(
            np.array([r.station_id for r in recs], dtype=object),
            np.array([r.t for r in recs], dtype=np.int64),
            np.array([r.pm25 for r in recs], dtype=float),
        )

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        if not tables:
            return cls(np.array([], dtype=object), np.array([], dtype=np.int64), np.array([]))
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in ("station_id", "t", "pm25")))


@dataclass
class MobileTable:
    device_id: np.ndarray
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    pm25: np.ndarray
    rh: np.ndarray
    temp: np.ndarray

    FIELDS = ("device_id", "t", "lat", "lon", "pm25", "rh", "temp")

    def __len__(self):
        return self.t.size

    def take(self, idx) -> "MobileTable":
        return MobileTable(*(getattr(self, f)[idx] for f in self.FIELDS))

    def with_pm25(self, pm25) -> "MobileTable":
        return MobileTable(self.device_id, self.t, self.lat, self.lon, np.asarray(pm25, dtype=float), self.rh, self.temp)

    def records(self):
        return [
            MobileRecord(str(d), int(t), GeoPoint(float(la), float(lo)), float(p), float(h), float(tc))
            for d, t, la, lo, p, h, tc in zip(self.device_id, self.t, self.lat, self.lon, self.pm25, self.rh, self.temp)
        ]

    @classmethod
    def from_records(cls, recs):
        return cls(
            np.array([r.device_id for r in recs], dtype=object),
            np.array([r.t for r in recs], dtype=np.int64),
            np.array([r.pos.lat for r in recs], dtype=float),
            np.array([r.pos.lon for r in recs], dtype=float),
            np.array([r.pm25_raw for r in recs], dtype=float),
            np.array([r.rh for r in recs], dtype=float),
            np.array([r.temp for r in recs], dtype=float),
        )

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        if not tables:
            return cls(np.array([], dtype=object), np.array([], dtype=np.int64),
                       *(np.array([]) for _ in range(5)))
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in cls.FIELDS))


@dataclass
class IngestReport:
    file: str
    rows_parsed: int = 0
    rows_kept: int = 0
    drop_reasons: dict = field(default_factory=dict)

    CSV_HEADER = "file,rows_parsed,rows_kept,rows_dropped,drop_reason_counts"

    @property
    def rows_dropped(self) -> int:
        return sum(self.drop_reasons.values())

    def drop(self, reason: str, count: int = 1):
        if count:
            self.drop_reasons[reason] = self.drop_reasons.get(reason, 0) + int(count)

    def csv_row(self) -> str:
        reasons = ";".join(f"{k}={v}" for k, v in sorted(self.drop_reasons.items()))
        return f"{self.file},{self.rows_parsed},{self.rows_kept},{self.rows_dropped},{reasons}"


def write_reports(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(IngestReport.CSV_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def format_time(t) -> np.ndarray:
    """Seconds since epoch to the canonical UTC timestamp string."""
    return pd.to_datetime(np.asarray(t, dtype=np.int64), unit="s").strftime(TIME_FORMAT).to_numpy()


def parse_time(values) -> np.ndarray:
    """UTC ISO-8601 strings to int64 epoch seconds; unparseable -> -1."""
    s = pd.Series(values, dtype=object)
    ts = pd.to_datetime(s, format=TIME_FORMAT, errors="coerce", utc=True)
    bad = ts.isna() & s.notna()
    if bad.any():
        ts[bad] = pd.to_datetime(s[bad], format="ISO8601", errors="coerce", utc=True)
    out = np.full(len(s), -1, dtype=np.int64)
    ok = ts.notna().to_numpy()
    out[ok] = ts[ok].to_numpy(dtype="datetime64[s]").astype(np.int64)
    return out


def _check_header(path: Path, expected) -> None:
    if not path.exists():
        raise IngestError(f"input file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    cols = tuple(c.strip() for c in header.split(","))
    if cols != tuple(expected):
        raise IngestError(f"{path}: expected header {','.join(expected)!r}, got {header!r}")


class _Chunk:
    """One batch of raw CSV fields, converted column by column on demand."""

    def __init__(self, batch, columns):
        self.batch = batch
        self.columns = tuple(columns)

    def __len__(self):
        return self.batch.num_rows

    def text(self, col) -> np.ndarray:
        return self.batch.column(self.columns.index(col)).to_numpy(zero_copy_only=False)

    def numeric(self, col) -> np.ndarray:
        """Float column; unparseable or missing fields become NaN.

        Arrow's cast is correctly rounded like Python's ``float``; fields it
        rejects (stray spaces, odd spellings) go through ``float`` one by one.
        """
        arr = self.batch.column(self.columns.index(col))
        try:
            return pc.cast(arr, pa.float64()).to_numpy(zero_copy_only=False)
        except pa.ArrowInvalid:
            return np.array([_to_float(v) for v in arr.to_pylist()], dtype=float)

    def time(self, col) -> np.ndarray:
        arr = self.batch.column(self.columns.index(col))
        ts = pc.strptime(arr, format=TIME_FORMAT, unit="s", error_is_null=True)
        out = pc.fill_null(pc.cast(ts, pa.int64()), -1).to_numpy(zero_copy_only=False).astype(np.int64)
        retry = np.flatnonzero((out == -1) & ~arr.is_null().to_numpy(zero_copy_only=False))
        if retry.size:
            out[retry] = parse_time(self.text(col)[retry])
        return out

    def row(self, i) -> list:
        return [self.batch.column(k)[i].as_py() for k in range(len(self.columns))]


def _to_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def _read_chunks(path: Path, columns, chunksize, strict, report):
    """Yield :class:`_Chunk` batches of ``chunksize`` rows (the last may be shorter).

    Lines with the wrong number of fields are fatal in strict mode and are
    otherwise counted as malformed and skipped.
    """
    bad_lines = []

    def on_bad(row):
        if strict:
            bad_lines.append(row.number)
            return "error"
        report.rows_parsed += 1
        report.drop("malformed")
        return "skip"

    read = pacsv.ReadOptions(column_names=list(columns), skip_rows=1, block_size=4 << 20)
    parse = pacsv.ParseOptions(invalid_row_handler=on_bad)
    convert = pacsv.ConvertOptions(column_types={c: pa.string() for c in columns}, strings_can_be_null=True)
    pending, n_pending = [], 0
    try:
        reader = pacsv.open_csv(path, read_options=read, parse_options=parse, convert_options=convert)
        for batch in reader:
            batch = pa.RecordBatch.from_arrays([pc.utf8_ltrim_whitespace(c) for c in batch.columns],
                                               names=list(columns))
            pending.append(batch)
            n_pending += batch.num_rows
            while n_pending >= chunksize:
                table = pa.Table.from_batches(pending)
                yield _Chunk(table.slice(0, chunksize).combine_chunks().to_batches()[0], columns)
                rest = table.slice(chunksize)
                pending, n_pending = rest.to_batches(), rest.num_rows
    except pa.ArrowInvalid as exc:
        if "Empty CSV file" in str(exc):
            return
        where = f" (line {bad_lines[0]})" if bad_lines else ""
        raise IngestError(f"{path}: malformed CSV{where}: {exc}") from exc
    if n_pending:
        yield _Chunk(pa.Table.from_batches(pending).combine_chunks().to_batches()[0], columns)


def _malformed(path, chunk, mask, strict, report, start_row):
    n = int(np.count_nonzero(mask))
    if n and strict:
        first = int(np.flatnonzero(mask)[0])
        raise IngestError(f"{path}: malformed data row {start_row + first + 1}: {chunk.row(first)}")
    report.drop("malformed", n)


def _in_range(v, lo_hi):
    return (v >= lo_hi[0]) & (v <= lo_hi[1])


def iter_fixed(path, strict=False, chunksize=DEFAULT_CHUNK, report=None):
    """Yield QC-filtered :class:`FixedTable` chunks, updating ``report``."""
    path = Path(path)
    _check_header(path, FIXED_COLUMNS)
    report = report if report is not None else IngestReport(path.name)
    row0 = 0
    for df in _read_chunks(path, FIXED_COLUMNS, chunksize, strict, report):
        n = len(df)
        report.rows_parsed += n
        sid = df.text("station_id")
        t = df.time("timestamp")
        pm = df.numeric("pm25")
        bad = pd.isna(sid) | (t < 0) | ~np.isfinite(pm)
        _malformed(path, df, bad, strict, report, row0)
        keep = ~bad
        tpos = keep & (t > 0)
        report.drop("timestamp", np.count_nonzero(keep & ~tpos))
        keep = tpos
        ok = keep & _in_range(pm, PM25_RANGE)
        report.drop("pm25_range", np.count_nonzero(keep & ~ok))
        report.rows_kept += int(np.count_nonzero(ok))
        row0 += n
        yield FixedTable(sid[ok], t[ok], pm[ok])


def iter_mobile(path, strict=False, chunksize=DEFAULT_CHUNK, report=None):
    """Yield QC-filtered :class:`MobileTable` chunks, updating ``report``."""
    path = Path(path)
    _check_header(path, MOBILE_COLUMNS)
    report = report if report is not None else IngestReport(path.name)
    row0 = 0
    for df in _read_chunks(path, MOBILE_COLUMNS, chunksize, strict, report):
        n = len(df)
        report.rows_parsed += n
        dev = df.text("device_id")
        t = df.time("timestamp")
        lat, lon = df.numeric("lat"), df.numeric("lon")
        pm, rh, tc = df.numeric("pm25"), df.numeric("rh"), df.numeric("temp")
        bad = pd.isna(dev) | (t < 0)
        for v in (lat, lon, pm, rh, tc):
            bad |= ~np.isfinite(v)
        _malformed(path, df, bad, strict, report, row0)
        keep = ~bad
        for reason, ok in (
            ("timestamp", t > 0),
            ("coordinate_range", (np.abs(lat) <= 90) & (np.abs(lon) <= 180)),
            ("pm25_range", _in_range(pm, PM25_RANGE)),
            ("rh_range", _in_range(rh, RH_RANGE)),
            ("temp_range", _in_range(tc, TEMP_RANGE)),
        ):
            report.drop(reason, np.count_nonzero(keep & ~ok))
            keep &= ok
        report.rows_kept += int(np.count_nonzero(keep))
        row0 += n
        yield MobileTable(dev[keep], t[keep], lat[keep], lon[keep], pm[keep], rh[keep], tc[keep])


def read_fixed(path, strict=False):
    report = IngestReport(Path(path).name)
    table = FixedTable.concat(iter_fixed(path, strict, report=report))
    return table, report


def read_mobile(path, strict=False):
    report = IngestReport(Path(path).name)
    table = MobileTable.concat(iter_mobile(path, strict, report=report))
    return table, report


def load_fixed(path, strict=False):
    """Parse a fixed-station CSV into records; returns ``(records, report)``."""
    table, report = read_fixed(path, strict)
    return table.records(), report


def load_mobile(path, strict=False):
    """Parse a mobile-sensor CSV into records; returns ``(records, report)``."""
    table, report = read_mobile(path, strict)
    return table.records(), report


def qc_fixed(records):
    return [r for r in records if PM25_RANGE[0] <= r.pm25 <= PM25_RANGE[1] and r.t > 0]


def qc_mobile(records):
    return [
        r for r in records
        if PM25_RANGE[0] <= r.pm25_raw <= PM25_RANGE[1]
        and RH_RANGE[0] <= r.rh <= RH_RANGE[1]
        and TEMP_RANGE[0] <= r.temp <= TEMP_RANGE[1]
        and r.t > 0
    ]


def load_stations(path):
    path = Path(path)
    _check_header(path, STATION_COLUMNS)
    out = []
    seen = set()
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for i, row in enumerate(rows, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                sid, lat, lon = row[0].strip(), float(row[1]), float(row[2])
            except (ValueError, IndexError) as exc:
                raise IngestError(f"{path}:{i}: bad station row {row!r}") from exc
            if sid in seen:
                raise IngestError(f"{path}:{i}: duplicate station_id {sid!r}")
            seen.add(sid)
            out.append(StationInfo(sid, GeoPoint(lat, lon)))
    return out


def write_fixed(path, table: FixedTable) -> None:
    df = pd.DataFrame({"station_id": table.station_id, "timestamp": format_time(table.t), "pm25": table.pm25})
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.4f")


def write_mobile(path, table: MobileTable) -> None:
    df = pd.DataFrame({
        "device_id": table.device_id,
        "timestamp": format_time(table.t),
        "lat": np.round(table.lat, 7),
        "lon": np.round(table.lon, 7),
        "pm25": np.round(table.pm25, 3),
        "rh": np.round(table.rh, 2),
        "temp": np.round(table.temp, 2),
    })
    df.to_csv(path, index=False, lineterminator="\n")


def write_stations(path, stations) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(STATION_COLUMNS) + "\n")
        for s in stations:
            fh.write(f"{s.station_id},{s.pos.lat:.7f},{s.pos.lon:.7f}\n")


# ---------------------------------------------------------------------------
# urban features


@dataclass
class UrbanFeatureLayer:
    name: str
    values: np.ndarray  # (n_rows, n_cols)

    def at(self, col: int, row: int) -> float:
        return float(self.values[row, col])


@dataclass(frozen=True)
class Rect:
    layer: str
    xmin: float
    ymin: float
    xmax: float
    ymax: float


@dataclass(frozen=True)
class Polyline:
    layer: str
    points: tuple  # ((x, y), ...)


def check_layer_name(name: str) -> None:
    if not LAYER_NAME.match(name):
        raise ConfigError(f"unknown urban feature layer {name!r}", ["input.features"])


def rect_cell_areas(r: Rect, g: GridSpec) -> np.ndarray:
    """Area of ``r`` falling in each cell, shape ``(n_rows, n_cols)``."""
    s = g.cell_size
    col_lo = g.origin.x + np.arange(g.n_cols) * s
    row_lo = g.origin.y + np.arange(g.n_rows) * s
    wx = np.clip(np.minimum(col_lo + s, r.xmax) - np.maximum(col_lo, r.xmin), 0.0, None)
    wy = np.clip(np.minimum(row_lo + s, r.ymax) - np.maximum(row_lo, r.ymin), 0.0, None)
    return np.outer(wy, wx)


def segment_cell_lengths(x0, y0, x1, y1, g: GridSpec) -> dict:
    """Length of the segment inside each cell it crosses, keyed by ``(col, row)``.

    The segment is cut at every grid line it crosses; each piece is assigned
    to the cell holding its midpoint. Pieces outside the grid are dropped.
    """
    dx, dy = x1 - x0, y1 - y0
    length = float(np.hypot(dx, dy))
    if length == 0.0:
        return {}
    ts = [0.0, 1.0]
    s = g.cell_size
    for p0, d, o, n in ((x0, dx, g.origin.x, g.n_cols), (y0, dy, g.origin.y, g.n_rows)):
        if d != 0.0:
            k = np.arange(n + 1)
            with np.errstate(over="ignore"):
                t = (o + k * s - p0) / d
            ts.extend(t[(t > 0.0) & (t < 1.0)].tolist())
    ts = np.unique(np.array(ts))
    mids = (ts[:-1] + ts[1:]) / 2.0
    pieces = (ts[1:] - ts[:-1]) * length
    col, row, inside = g.cell_indices(x0 + mids * dx, y0 + mids * dy)
    out = {}
    for c, r_, ln in zip(col[inside], row[inside], pieces[inside]):
        key = (int(c), int(r_))
        out[key] = out.get(key, 0.0) + float(ln)
    return out


def rasterize_features(vector_inputs, g: GridSpec, layer_names=None):
    """Rasterise rectangles (area) and polylines (length) onto ``g``.

    Returns one :class:`UrbanFeatureLayer` per layer name, sorted by name.
    ``layer_names`` adds zero-filled layers that have no geometry.
    """
    arrays = {}
    for name in layer_names or ():
        check_layer_name(name)
        arrays.setdefault(name, np.zeros((g.n_rows, g.n_cols)))
    for geom in vector_inputs:
        check_layer_name(geom.layer)
        acc = arrays.setdefault(geom.layer, np.zeros((g.n_rows, g.n_cols)))
        if isinstance(geom, Rect):
            acc += rect_cell_areas(geom, g)
        elif isinstance(geom, Polyline):
            pts = geom.points
            for (xa, ya), (xb, yb) in zip(pts[:-1], pts[1:]):
                for (c, r), ln in segment_cell_lengths(xa, ya, xb, yb, g).items():
                    acc[r, c] += ln
        else:
            raise TypeError(f"unsupported geometry {type(geom).__name__}")
    return [UrbanFeatureLayer(name, arrays[name]) for name in sorted(arrays)]


def load_feature_geometry(path, ref: GeoPoint):
    """Geometry CSV rows ``layer,kind,lat,lon,lat,lon,...`` projected about ``ref``.

    ``rect`` rows give two opposite corners; ``polyline`` rows give two or
    more vertices.
    """
    path = Path(path)
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if [h.strip() for h in header[:2]] != ["layer", "kind"]:
            raise IngestError(f"{path}: not a geometry feature file")
        for i, row in enumerate(rows, start=2):
            if not row:
                continue
            layer, kind = row[0].strip(), row[1].strip()
            check_layer_name(layer)
            try:
                vals = np.array([float(v) for v in row[2:] if v.strip()])
            except ValueError as exc:
                raise IngestError(f"{path}:{i}: bad coordinates") from exc
            if vals.size % 2 or vals.size < 4:
                raise IngestError(f"{path}:{i}: need lat,lon pairs")
            x, y = project_arrays(vals[0::2], vals[1::2], ref)
            if kind == "rect":
                out.append(Rect(layer, float(x.min()), float(y.min()), float(x.max()), float(y.max())))
            elif kind == "polyline":
                out.append(Polyline(layer, tuple(zip(x.tolist(), y.tolist()))))
            else:
                raise IngestError(f"{path}:{i}: unknown geometry kind {kind!r}")
    return out


def load_feature_cells(path, g: GridSpec):
    """Per-cell CSV ``layer,col,row,value`` into layers on grid ``g``."""
    path = Path(path)
    _check_header(path, ("layer", "col", "row", "value"))
    df = pd.read_csv(path, dtype={"layer": str, "col": np.int64, "row": np.int64, "value": float},
                     float_precision="round_trip")
    arrays = {}
    for layer, sub in df.groupby("layer", sort=True):
        check_layer_name(layer)
        c, r, v = sub["col"].to_numpy(), sub["row"].to_numpy(), sub["value"].to_numpy()
        if np.any((c < 0) | (c >= g.n_cols) | (r < 0) | (r >= g.n_rows)):
            raise IngestError(f"{path}: layer {layer} has cells outside the grid")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise IngestError(f"{path}: layer {layer} has negative or non-finite values")
        acc = np.zeros((g.n_rows, g.n_cols))
        np.add.at(acc, (r, c), v)
        arrays[layer] = acc
    return [UrbanFeatureLayer(k, arrays[k]) for k in sorted(arrays)]


def load_features(paths, g: GridSpec):
    """Load any mix of geometry and per-cell feature files onto ``g``."""
    geoms = []
    cell_layers = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            header = fh.readline().strip()
        if header.startswith("layer,kind"):
            geoms.extend(load_feature_geometry(p, g.ref))
        else:
            cell_layers.extend(load_feature_cells(p, g))
    layers = {l.name: l for l in rasterize_features(geoms, g)}
    for l in cell_layers:
        if l.name in layers:
            layers[l.name] = UrbanFeatureLayer(l.name, layers[l.name].values + l.values)
        else:
            layers[l.name] = l
    return [layers[k] for k in sorted(layers)]


def write_feature_geometry(path, geoms, ref: GeoPoint) -> None:
    from .geo import unproject_arrays

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,kind,coords\n")
        for gm in geoms:
            if isinstance(gm, Rect):
                xs, ys, kind = np.array([gm.xmin, gm.xmax]), np.array([gm.ymin, gm.ymax]), "rect"
            else:
                xs = np.array([p[0] for p in gm.points])
                ys = np.array([p[1] for p in gm.points])
                kind = "polyline"
            lat, lon = unproject_arrays(xs, ys, ref)
            coords = ",".join(f"{a:.8f},{b:.8f}" for a, b in zip(lat, lon))
            fh.write(f"{gm.layer},{kind},{coords}\n")
