"""Local tangent-plane projection and grid addressing.

All spatial aggregation in the pipeline goes through this module. Points are
projected with a local equirectangular approximation around a reference point
(the bounding-box centroid), which is accurate to well under a metre over the
few tens of kilometres of a city.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CoordinateError

EARTH_RADIUS_M = 6_371_000.0
MAX_OFFSET_DEG = 2.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise CoordinateError(f"coordinate out of range: lat={self.lat}, lon={self.lon}")


@dataclass(frozen=True)
class ProjectedPoint:
    x: float
    y: float


@dataclass(frozen=True, order=True)
class CellKey:
    col: int
    row: int


def project(p: GeoPoint, ref: GeoPoint) -> ProjectedPoint:
    x, y = project_arrays(np.array([p.lat]), np.array([p.lon]), ref)
    return ProjectedPoint(float(x[0]), float(y[0]))


def unproject(p: ProjectedPoint, ref: GeoPoint) -> GeoPoint:
    lat, lon = unproject_arrays(np.array([p.x]), np.array([p.y]), ref)
    return GeoPoint(float(lat[0]), float(lon[0]))


def project_arrays(lat, lon, ref: GeoPoint):
    """Vectorised :func:`project`; returns ``(x, y)`` arrays in metres."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise CoordinateError("coordinate out of range")
    if np.any(np.abs(lat - ref.lat) > MAX_OFFSET_DEG) or np.any(np.abs(lon - ref.lon) > MAX_OFFSET_DEG):
        raise CoordinateError(f"point more than {MAX_OFFSET_DEG} degrees from reference")
    x = EARTH_RADIUS_M * math.cos(math.radians(ref.lat)) * np.radians(lon - ref.lon)
    y = EARTH_RADIUS_M * np.radians(lat - ref.lat)
    return x, y


def unproject_arrays(x, y, ref: GeoPoint):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lat = ref.lat + np.degrees(y / EARTH_RADIUS_M)
    lon = ref.lon + np.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(ref.lat))))
    return lat, lon


@dataclass(frozen=True)
class GridSpec:
    """Regular square tessellation in projected metres.

    ``origin`` is the lower-left corner. ``ref`` is the projection reference
    shared by every point addressed through this grid.
    """

    origin: ProjectedPoint
    cell_size: float
    n_cols: int
    n_rows: int
    ref: GeoPoint = field(default=GeoPoint(0.0, 0.0))

    def __post_init__(self):
        if not (self.cell_size > 0) or not math.isfinite(self.cell_size):
            raise ConfigError(f"cell_size must be positive, got {self.cell_size}", ["grid.cell_size_m"])
        if self.n_cols < 1 or self.n_rows < 1:
            raise ConfigError("grid must have at least one row and column", ["grid.n_cols", "grid.n_rows"])

    @classmethod
    def from_geo_origin(cls, origin_lat, origin_lon, cell_size, n_cols, n_rows) -> "GridSpec":
        """Grid anchored at a lower-left lat/lon, projected about its centroid."""
        width = n_cols * cell_size
        height = n_rows * cell_size
        ref_lat = origin_lat + math.degrees(height / 2 / EARTH_RADIUS_M)
        ref_lon = origin_lon + math.degrees(width / 2 / (EARTH_RADIUS_M * math.cos(math.radians(ref_lat))))
        ref = GeoPoint(ref_lat, ref_lon)
        return cls(ProjectedPoint(-width / 2, -height / 2), float(cell_size), int(n_cols), int(n_rows), ref)

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def bounds(self):
        """``(xmin, ymin, xmax, ymax)`` of the covered area."""
        return (
            self.origin.x,
            self.origin.y,
            self.origin.x + self.n_cols * self.cell_size,
            self.origin.y + self.n_rows * self.cell_size,
        )

    @property
    def origin_geo(self) -> GeoPoint:
        return unproject(self.origin, self.ref)

    def retile(self, cell_size: float) -> "GridSpec":
        """Same origin and reference, new cell size, covering at least the same box."""
        xmin, ymin, xmax, ymax = self.bounds
        n_cols = max(1, math.ceil((xmax - xmin) / cell_size - 1e-9))
        n_rows = max(1, math.ceil((ymax - ymin) / cell_size - 1e-9))
        return GridSpec(self.origin, float(cell_size), n_cols, n_rows, self.ref)

    def cell_center(self, key: CellKey) -> ProjectedPoint:
        return ProjectedPoint(
            self.origin.x + (key.col + 0.5) * self.cell_size,
            self.origin.y + (key.row + 0.5) * self.cell_size,
        )

    def centers(self):
        """Cell-centre coordinate arrays of shape ``(n_rows, n_cols)``."""
        xs = self.origin.x + (np.arange(self.n_cols) + 0.5) * self.cell_size
        ys = self.origin.y + (np.arange(self.n_rows) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    def cell_indices(self, x, y):
        """Vectorised :func:`cell_of`.

        Returns ``(col, row, inside)``; ``col``/``row`` are only meaningful
        where ``inside`` is true.
        """
        col = np.floor((np.asarray(x, dtype=float) - self.origin.x) / self.cell_size)
        row = np.floor((np.asarray(y, dtype=float) - self.origin.y) / self.cell_size)
        inside = (col >= 0) & (col < self.n_cols) & (row >= 0) & (row < self.n_rows)
        return col.astype(np.int64), row.astype(np.int64), inside

    def linear_index(self, key: CellKey) -> int:
        return key.row * self.n_cols + key.col

    def key_of_linear(self, idx: int) -> CellKey:
        return CellKey(int(idx % self.n_cols), int(idx // self.n_cols))


def cell_of(p: ProjectedPoint, g: GridSpec) -> CellKey | None:
    """Cell containing ``p`` under half-open ``[edge, edge + size)`` cells, or None outside."""
    col, row, inside = g.cell_indices(np.array([p.x]), np.array([p.y]))
    if not inside[0]:
        return None
    return CellKey(int(col[0]), int(row[0]))


@dataclass(frozen=True)
class StationCell:
    station_id: str
    center: ProjectedPoint
    half_width: float


def in_station_cell(p: ProjectedPoint, c: StationCell) -> bool:
    return bool(in_station_cell_arrays(np.array([p.x]), np.array([p.y]), c)[0])


def in_station_cell_arrays(x, y, c: StationCell):
    # half-open on both axes: center - hw <= coord < center + hw
    return (
        (x >= c.center.x - c.half_width)
        & (x < c.center.x + c.half_width)
        & (y >= c.center.y - c.half_width)
        & (y < c.center.y + c.half_width)
    )


def station_cells(stations, ref: GeoPoint, side: float):
    """Square cells of side ``side`` centred on each station."""
    cells = []
    for st in stations:
        cells.append(StationCell(st.station_id, project(st.pos, ref), side / 2.0))
    return cells
