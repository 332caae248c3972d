"""Deterministic synthetic city for end-to-end, truth-referenced checks.

The ground-truth field is

    truth(x, y, t) = level(t) · diurnal(t) · (background + Σ drifting Gaussian plumes + road term)

clamped to 0-500 µg/m³. The road term is the largest of the per-class
terms ``amp_c · exp(-d_c / decay)`` with ``d_c`` the distance to the nearest
road of class ``c``. Plumes drift on the torus spanned by the grid, so they
never leave the domain. ``level(t)`` is a day-to-day factor, 1 from the
scenario's first day onwards and seeded log-normal on earlier days, which
gives the co-location campaign a realistic spread of concentrations. Roads form a rectangular lattice
that is pruned more heavily towards the periphery. Taxis random-walk the
lattice and sample every 15 s; stations sit near cell centres and report
5-minute means of the truth.

Low-cost sensors read

    truth · bias · device_factor · (1 + humidity_coef · f²/(1 - f)) + temp_coef · (T - 20) + noise

with ``f = min(RH, 95) / 100``, a hygroscopic-growth shaped humidity term.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geo import CellKey, GeoPoint, GridSpec, ProjectedPoint, unproject_arrays
from .ingest import (
    FixedTable,
    MobileTable,
    Polyline,
    Rect,
    StationInfo,
    format_time,
    parse_time,
    write_feature_geometry,
    write_fixed,
    write_mobile,
    write_stations,
)
from .maps import PollutionMap

ROAD_CLASSES = ("primary", "secondary", "tertiary")
LAND_USE = ("residential", "commercial", "industrial", "transportation", "public")
LAND_COVER = ("artificial", "grass", "water")
DAY = 86_400.0
MAX_PRIOR_DAYS = 366


@dataclass(frozen=True)
class Plume:
    x0: float
    y0: float
    vx: float
    vy: float
    amplitude: float
    sigma: float
    period: float = 0.0  # emission pulsing period in s, 0 for steady
    phase: float = 0.0
    depth: float = 0.0

    def strength(self, dt):
        if self.period <= 0 or self.depth == 0:
            return self.amplitude
        return self.amplitude * (1.0 + self.depth * np.sin(2 * np.pi * dt / self.period + self.phase))


@dataclass
class ScenarioConfig:
    seed: int = 20230301
    center_lat: float = 23.13
    center_lon: float = 113.30
    cell_size_m: float = 500.0
    n_cols: int = 20
    n_rows: int = 20
    start: str = "2023-03-01T08:00:00Z"
    duration_s: int = 3 * 3600
    n_stations: int = 16
    n_taxis: int = 150
    sample_interval_s: int = 15
    fixed_interval_s: int = 300
    taxi_speed_m_s: float = 9.0
    prune_max: float = 0.55
    # truth field
    background: float = 38.0
    diurnal_amplitude: float = 0.2
    diurnal_phase_hour: float = 9.5
    n_plumes: int = 6
    plume_amplitude: tuple = (30.0, 70.0)
    plume_sigma_m: tuple = (300.0, 700.0)
    plume_speed_m_s: tuple = (1.0, 3.0)
    core_amplitude: float = 0.0
    core_sigma_m: float = 2500.0
    core_period_s: float = 3600.0
    core_depth: float = 0.3
    plume_spread_m: float = 2000.0
    plume_period_s: tuple = (1200.0, 3600.0)
    plume_depth: float = 0.5
    plumes: tuple = ()
    road_amplitude: tuple = (24.0, 21.0, 18.0)
    road_decay_m: float = 40.0
    day_level_sigma: float = 0.45
    # sensors
    bias: float = 1.4
    device_bias_spread: float = 0.03
    noise_std: float = 3.0
    humidity_coef: float = 0.15
    temp_coef: float = 0.3
    rh_mean: float = 70.0
    rh_amplitude: float = 15.0
    rh_peak_hour: float = 5.0
    temp_mean: float = 20.0
    temp_amplitude: float = 5.0
    temp_peak_hour: float = 14.0
    met_noise: float = 0.5
    # co-location campaign at the first station
    colocation_days: float = 7.0
    colocation_devices: int = 3

    def validate(self):
        bad = []
        for name in ("n_stations", "n_taxis", "n_cols", "n_rows", "colocation_devices"):
            if getattr(self, name) < 1:
                bad.append(name)
        for name in ("cell_size_m", "duration_s", "sample_interval_s", "fixed_interval_s", "taxi_speed_m_s",
                     "road_decay_m", "bias"):
            if not getattr(self, name) > 0:
                bad.append(name)
        for name in ("noise_std", "device_bias_spread", "met_noise", "background", "humidity_coef", "colocation_days",
                     "day_level_sigma"):
            if getattr(self, name) < 0:
                bad.append(name)
        if self.n_plumes < 0:
            bad.append("n_plumes")
        if not 0 <= self.prune_max < 1:
            bad.append("prune_max")
        if self.fixed_interval_s % self.sample_interval_s:
            bad.append("fixed_interval_s")
        if self.n_stations > max(1, (self.n_cols - 2) * (self.n_rows - 2)):
            bad.append("n_stations")
        if len(self.road_amplitude) != len(ROAD_CLASSES):
            bad.append("road_amplitude")
        try:
            parse_time([self.start])
            if parse_time([self.start])[0] <= 0:
                bad.append("start")
        except Exception:  # noqa: BLE001
            bad.append("start")
        if bad:
            raise ConfigError("invalid scenario config: " + ", ".join(f"scenario.{b}" for b in bad),
                              [f"scenario.{b}" for b in bad])

    @property
    def start_epoch(self) -> int:
        return int(parse_time([self.start])[0])

    @property
    def grid(self) -> GridSpec:
        return grid_for(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in (asdict(p) if isinstance(p, Plume) else p for p in v)) if v and not isinstance(v[0], Plume) else \
                    ";".join("/".join(f"{k}={val!r}" for k, val in asdict(p).items()) for p in v)
            lines.append(f"scenario.{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict) -> "ScenarioConfig":
        """Build from ``{field: string}`` (as found in a run manifest)."""
        cfg = cls()
        known = {f.name: f for f in fields(cls)}
        bad = [k for k in kv if k not in known]
        if bad:
            raise ConfigError("unknown scenario keys: " + ", ".join(f"scenario.{b}" for b in bad),
                              [f"scenario.{b}" for b in bad])
        for k, raw in kv.items():
            default = getattr(cfg, k)
            try:
                if k == "plumes":
                    val = _parse_plumes(raw)
                elif isinstance(default, tuple):
                    val = tuple(float(x) for x in raw.split(",") if x.strip())
                elif isinstance(default, bool):
                    val = raw.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    val = int(raw)
                elif isinstance(default, float):
                    val = float(raw)
                else:
                    val = raw
            except ValueError as exc:
                raise ConfigError(f"scenario.{k}: cannot parse {raw!r}", [f"scenario.{k}"]) from exc
            setattr(cfg, k, val)
        return cfg


def _parse_plumes(raw: str):
    out = []
    for chunk in raw.split(";"):
        if not chunk.strip():
            continue
        kv = dict(part.split("=") for part in chunk.split("/"))
        out.append(Plume(**{k.strip(): float(v) for k, v in kv.items()}))
    return tuple(out)


def grid_for(cfg: ScenarioConfig) -> GridSpec:
    """Native grid of the scenario, centred on the configured point."""
    width = cfg.n_cols * cfg.cell_size_m
    height = cfg.n_rows * cfg.cell_size_m
    ref = GeoPoint(cfg.center_lat, cfg.center_lon)
    return GridSpec(ProjectedPoint(-width / 2, -height / 2), cfg.cell_size_m, cfg.n_cols, cfg.n_rows, ref)


def _rng(cfg: ScenarioConfig, *stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), *stream]))


@dataclass
class RoadNetwork:
    """Lattice nodes, surviving edges and their road classes."""

    nodes: np.ndarray  # (n, 2) x, y
    edges: np.ndarray  # (m, 2) node indices
    edge_class: np.ndarray  # (m,) index into ROAD_CLASSES
    adjacency: list

    def segments(self, cls_index=None):
        e = self.edges if cls_index is None else self.edges[self.edge_class == cls_index]
        a, b = self.nodes[e[:, 0]], self.nodes[e[:, 1]]
        return a, b

    def polylines(self):
        out = []
        for (i, j), c in zip(self.edges, self.edge_class):
            out.append(Polyline(f"road_length.{ROAD_CLASSES[c]}",
                                (tuple(self.nodes[i].tolist()), tuple(self.nodes[j].tolist()))))
        return out


def build_roads(cfg: ScenarioConfig) -> RoadNetwork:
    """Lattice through the quarter points of the cells, pruned by distance from centre.

    Only the largest connected component is kept, so every taxi can reach
    every road.
    """
    g = grid_for(cfg)
    s = cfg.cell_size_m
    xs = g.origin.x + s / 4 + np.arange(cfg.n_cols) * s
    ys = g.origin.y + s / 4 + np.arange(cfg.n_rows) * s
    nx, ny = xs.size, ys.size
    nodes = np.array([(x, y) for y in ys for x in xs])

    def line_class(k):
        return 0 if k % 4 == 0 else (1 if k % 2 == 0 else 2)

    rng = _rng(cfg, 1)
    rmax = math.hypot(g.bounds[2], g.bounds[3])
    edges, classes = [], []
    for j in range(ny):
        for i in range(nx):
            a = j * nx + i
            for (di, dj, k) in ((1, 0, j), (0, 1, i)):
                ii, jj = i + di, j + dj
                if ii >= nx or jj >= ny:
                    continue
                b = jj * nx + ii
                c = line_class(k)
                mid = (nodes[a] + nodes[b]) / 2
                p = cfg.prune_max * (math.hypot(*mid) / rmax) ** 1.5 if c != 0 else 0.0
                if rng.random() < p:
                    continue
                edges.append((a, b))
                classes.append(c)
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    classes = np.array(classes, dtype=np.int64)
    adj = [[] for _ in range(len(nodes))]
    for (a, b) in edges:
        adj[a].append(int(b))
        adj[b].append(int(a))
    # largest component
    comp = -np.ones(len(nodes), dtype=np.int64)
    sizes = []
    for start in range(len(nodes)):
        if comp[start] >= 0 or not adj[start]:
            continue
        stack, n = [start], 0
        comp[start] = len(sizes)
        while stack:
            u = stack.pop()
            n += 1
            for v in adj[u]:
                if comp[v] < 0:
                    comp[v] = len(sizes)
                    stack.append(v)
        sizes.append(n)
    main = int(np.argmax(sizes))
    keep = comp[edges[:, 0]] == main
    edges, classes = edges[keep], classes[keep]
    adj = [[] for _ in range(len(nodes))]
    for (a, b) in edges:
        adj[a].append(int(b))
        adj[b].append(int(a))
    for a in adj:
        a.sort()
    return RoadNetwork(nodes, edges, classes, adj)


def _segment_distance(px, py, ax, ay, bx, by):
    """Distances from points (N,) to segments (M,), shape (N, M)."""
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    t = ((px[:, None] - ax[None, :]) * dx[None, :] + (py[:, None] - ay[None, :]) * dy[None, :]) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    qx = ax[None, :] + t * dx[None, :]
    qy = ay[None, :] + t * dy[None, :]
    return np.hypot(px[:, None] - qx, py[:, None] - qy)


class TruthField:
    """Vectorised ground truth ``truth(x, y, t)`` in µg/m³."""

    def __init__(self, cfg: ScenarioConfig, roads: RoadNetwork, plumes):
        self.cfg = cfg
        self.roads = roads
        self.plumes = tuple(plumes)
        self.t0 = cfg.start_epoch
        self._segs = [roads.segments(c) for c in range(len(ROAD_CLASSES))]
        g = grid_for(cfg)
        self._box = g.bounds
        self.day0 = (self.t0 // int(DAY)) * int(DAY)
        rng = _rng(cfg, 5)
        # levels of the days before the first scenario day, most recent first
        self._levels = np.exp(cfg.day_level_sigma * rng.standard_normal(MAX_PRIOR_DAYS))

    def _day(self, d):
        d = np.asarray(d, dtype=np.int64)
        out = np.ones(d.shape)
        before = d < 0
        out[before] = self._levels[np.minimum(-d[before], MAX_PRIOR_DAYS) - 1]
        return out

    def level(self, t):
        """Day-to-day factor, blended linearly over two hours either side of midnight."""
        s = np.asarray(t, dtype=float) - self.day0
        d = np.floor(s / DAY).astype(np.int64)
        into = s - d * DAY
        cur = self._day(d)
        h = 2 * 3600.0
        w_prev = np.clip((h - into) / (2 * h), 0.0, 0.5)
        w_next = np.clip((into - (DAY - h)) / (2 * h), 0.0, 0.5)
        return (1 - w_prev - w_next) * cur + w_prev * self._day(d - 1) + w_next * self._day(d + 1)

    def diurnal(self, t):
        hour = (np.asarray(t, dtype=float) % DAY) / 3600.0
        return 1.0 + self.cfg.diurnal_amplitude * np.sin(2 * np.pi * (hour - self.cfg.diurnal_phase_hour) / 24.0)

    def road_term(self, x, y):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        out = np.zeros(x.size)
        step = 4096
        for c, amp in enumerate(self.cfg.road_amplitude):
            a, b = self._segs[c]
            if amp == 0 or a.shape[0] == 0:
                continue
            for s in range(0, x.size, step):
                d = _segment_distance(x[s:s + step], y[s:s + step], a[:, 0], a[:, 1], b[:, 0], b[:, 1]).min(axis=1)
                out[s:s + step] = np.maximum(out[s:s + step], amp * np.exp(-d / self.cfg.road_decay_m))
        return out

    def plume_term(self, x, y, t):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        dt = np.broadcast_to(np.asarray(t, dtype=float).ravel() - self.t0, x.shape)
        out = np.zeros(x.size)
        xmin, ymin, xmax, ymax = self._box
        w, h = xmax - xmin, ymax - ymin
        for p in self.plumes:
            cx, cy = self._wrap(p.x0 + p.vx * dt, p.y0 + p.vy * dt)
            # minimum-image offsets on the torus
            dx = (x - cx + w / 2) % w - w / 2
            dy = (y - cy + h / 2) % h - h / 2
            out += p.strength(dt) * np.exp(-(dx * dx + dy * dy) / (2 * p.sigma ** 2))
        return out

    def _wrap(self, x, y):
        xmin, ymin, xmax, ymax = self._box
        return (x - xmin) % (xmax - xmin) + xmin, (y - ymin) % (ymax - ymin) + ymin

    def plume_center(self, k: int, t: float):
        p = self.plumes[k]
        cx, cy = self._wrap(np.float64(p.x0 + p.vx * (t - self.t0)), np.float64(p.y0 + p.vy * (t - self.t0)))
        return float(cx), float(cy)

    def __call__(self, x, y, t, road=None):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        t = np.broadcast_to(np.asarray(t, dtype=float).ravel(), x.shape)
        if road is None:
            road = self.road_term(x, y)
        v = self.level(t) * self.diurnal(t) * (self.cfg.background + self.plume_term(x, y, t) + road)
        return np.clip(v, 0.0, 500.0)

    def interval_mean(self, x, y, start, interval, n_sub=10, road=None):
        """Mean of the truth over ``[start, start + interval)`` at fixed points."""
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if road is None:
            road = self.road_term(x, y)
        acc = np.zeros(x.size)
        for k in range(n_sub):
            acc += self(x, y, start + (k + 0.5) * interval / n_sub, road=road)
        return acc / n_sub


def make_plumes(cfg: ScenarioConfig):
    if cfg.plumes:
        return tuple(cfg.plumes)
    rng = _rng(cfg, 2)
    g = grid_for(cfg)
    xmin, ymin, xmax, ymax = g.bounds
    out = []
    if cfg.core_amplitude > 0:
        # stationary, pulsing urban-core emissions
        out.append(Plume(0.0, 0.0, 0.0, 0.0, float(cfg.core_amplitude), float(cfg.core_sigma_m),
                         float(cfg.core_period_s), float(rng.uniform(0, 2 * np.pi)), float(cfg.core_depth)))
    for _ in range(cfg.n_plumes):
        speed = rng.uniform(*cfg.plume_speed_m_s)
        ang = rng.uniform(0, 2 * np.pi)
        # sources cluster in the urban core; a non-positive spread places them uniformly
        if cfg.plume_spread_m > 0:
            x0, y0 = np.clip(rng.normal(0.0, cfg.plume_spread_m, size=2), [xmin, ymin], [xmax, ymax])
        else:
            x0, y0 = rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)
        out.append(Plume(
            float(x0),
            float(y0),
            float(speed * np.cos(ang)),
            float(speed * np.sin(ang)),
            float(rng.uniform(*cfg.plume_amplitude)),
            float(rng.uniform(*cfg.plume_sigma_m)),
            float(rng.uniform(*cfg.plume_period_s)),
            float(rng.uniform(0, 2 * np.pi)),
            float(cfg.plume_depth),
        ))
    return tuple(out)


def make_stations(cfg: ScenarioConfig):
    """Stations near the centres of distinct interior cells, ``S01``, ``S02``, ..."""
    g = grid_for(cfg)
    rng = _rng(cfg, 3)
    interior = [CellKey(c, r) for r in range(1, cfg.n_rows - 1) for c in range(1, cfg.n_cols - 1)]
    if not interior:
        interior = [CellKey(c, r) for r in range(cfg.n_rows) for c in range(cfg.n_cols)]
    # urban stations cluster towards the centre like the road network
    r = np.array([math.hypot(*(lambda c: (c.x, c.y))(g.cell_center(k))) for k in interior])
    w = np.exp(-r / (0.3 * cfg.n_cols * cfg.cell_size_m))
    pick = rng.choice(len(interior), size=cfg.n_stations, replace=False, p=w / w.sum())
    out = []
    for k, i in enumerate(sorted(pick.tolist())):
        c = g.cell_center(interior[i])
        jx, jy = rng.uniform(-5.0, 5.0, size=2)
        out.append((f"S{k + 1:02d}", ProjectedPoint(c.x + float(jx), c.y + float(jy))))
    return out


def humidity(cfg: ScenarioConfig, t):
    hour = (np.asarray(t, dtype=float) % DAY) / 3600.0
    return cfg.rh_mean + cfg.rh_amplitude * np.cos(2 * np.pi * (hour - cfg.rh_peak_hour) / 24.0)


def temperature(cfg: ScenarioConfig, t):
    hour = (np.asarray(t, dtype=float) % DAY) / 3600.0
    return cfg.temp_mean + cfg.temp_amplitude * np.cos(2 * np.pi * (hour - cfg.temp_peak_hour) / 24.0)


def sensor_reading(cfg: ScenarioConfig, truth, rh, temp, device_factor, noise):
    f = np.minimum(rh, 95.0) / 100.0
    growth = 1.0 + cfg.humidity_coef * f * f / (1.0 - f)
    v = truth * cfg.bias * device_factor * growth + cfg.temp_coef * (temp - 20.0) + noise
    return np.clip(v, 0.0, 500.0)


def taxi_walk(cfg: ScenarioConfig, roads: RoadNetwork, taxi: int):
    """Positions every ``sample_interval_s`` for one taxi, shape (n_steps, 2)."""
    rng = _rng(cfg, 1000, taxi)
    n_steps = int(cfg.duration_s // cfg.sample_interval_s)
    usable = np.flatnonzero([len(a) > 0 for a in roads.adjacency])
    r = np.hypot(roads.nodes[usable, 0], roads.nodes[usable, 1])
    w = np.exp(-r / (0.25 * cfg.n_cols * cfg.cell_size_m))
    here = int(usable[rng.choice(usable.size, p=w / w.sum())])
    prev = -1
    nxt = int(rng.choice(roads.adjacency[here]))
    speed = cfg.taxi_speed_m_s * rng.uniform(0.7, 1.3)
    step_len = speed * cfg.sample_interval_s
    along = float(rng.uniform(0, 1)) * float(np.hypot(*(roads.nodes[nxt] - roads.nodes[here])))
    out = np.empty((n_steps, 2))
    for k in range(n_steps):
        a, b = roads.nodes[here], roads.nodes[nxt]
        seg = float(np.hypot(*(b - a)))
        frac = along / seg
        out[k] = a + frac * (b - a)
        along += step_len
        while along >= seg:
            along -= seg
            prev, here = here, nxt
            choices = [n for n in roads.adjacency[here] if n != prev] or roads.adjacency[here]
            nxt = int(choices[int(rng.integers(len(choices)))])
            seg = float(np.hypot(*(roads.nodes[nxt] - roads.nodes[here])))
    return out


@dataclass
class Scenario:
    cfg: ScenarioConfig
    grid: GridSpec
    roads: RoadNetwork
    truth: TruthField
    stations: list  # [(station_id, ProjectedPoint)]

    def station_infos(self):
        lat, lon = unproject_arrays([p.x for _, p in self.stations], [p.y for _, p in self.stations], self.grid.ref)
        return [StationInfo(sid, GeoPoint(float(a), float(b))) for (sid, _), a, b in zip(self.stations, lat, lon)]


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    cfg.validate()
    roads = build_roads(cfg)
    return Scenario(cfg, grid_for(cfg), roads, TruthField(cfg, roads, make_plumes(cfg)), make_stations(cfg))


def interval_starts(cfg: ScenarioConfig, interval=None):
    interval = interval or cfg.fixed_interval_s
    t0 = cfg.start_epoch
    first = -(-t0 // interval) * interval
    return np.arange(first, t0 + cfg.duration_s, interval, dtype=np.int64)


def fixed_table(sc: Scenario) -> FixedTable:
    cfg = sc.cfg
    xs = np.array([p.x for _, p in sc.stations])
    ys = np.array([p.y for _, p in sc.stations])
    road = sc.truth.road_term(xs, ys)
    ids, ts, vals = [], [], []
    for s in interval_starts(cfg):
        v = sc.truth.interval_mean(xs, ys, s, cfg.fixed_interval_s, road=road)
        ids.extend(sid for sid, _ in sc.stations)
        ts.extend([int(s)] * len(sc.stations))
        vals.extend(v.tolist())
    return FixedTable(np.array(ids, dtype=object), np.array(ts, dtype=np.int64), np.array(vals))


def mobile_table(sc: Scenario) -> MobileTable:
    cfg = sc.cfg
    n_steps = int(cfg.duration_s // cfg.sample_interval_s)
    t = cfg.start_epoch + np.arange(n_steps, dtype=np.int64) * cfg.sample_interval_s
    parts = []
    for k in range(cfg.n_taxis):
        pos = taxi_walk(cfg, sc.roads, k)
        rng = _rng(cfg, 2000, k)
        dev_factor = 1.0 + cfg.device_bias_spread * rng.standard_normal()
        rh = np.clip(humidity(cfg, t) + cfg.met_noise * rng.standard_normal(n_steps), 0.0, 100.0)
        tc = temperature(cfg, t) + cfg.met_noise * rng.standard_normal(n_steps)
        noise = cfg.noise_std * rng.standard_normal(n_steps)
        truth = sc.truth(pos[:, 0], pos[:, 1], t)
        pm = sensor_reading(cfg, truth, rh, tc, dev_factor, noise)
        lat, lon = unproject_arrays(pos[:, 0], pos[:, 1], sc.grid.ref)
        parts.append(MobileTable(np.full(n_steps, f"T{k + 1:04d}", dtype=object), t.copy(), lat, lon, pm, rh, tc))
    return MobileTable.concat(parts)


def colocation_tables(sc: Scenario):
    """Stationary LCS units at the first station plus that station's reference series."""
    cfg = sc.cfg
    sid, p = sc.stations[0]
    t_end = cfg.start_epoch
    span = int(cfg.colocation_days * DAY) // cfg.fixed_interval_s * cfg.fixed_interval_s
    t_begin = t_end - span
    t = np.arange(t_begin, t_end, cfg.sample_interval_s, dtype=np.int64)
    x = np.full(t.size, p.x)
    y = np.full(t.size, p.y)
    road = sc.truth.road_term(x[:1], y[:1])
    truth = sc.truth(x, y, t, road=np.full(t.size, road[0]))
    lat, lon = unproject_arrays([p.x], [p.y], sc.grid.ref)
    parts = []
    for d in range(cfg.colocation_devices):
        rng = _rng(cfg, 3000, d)
        dev_factor = 1.0 + cfg.device_bias_spread * rng.standard_normal()
        rh = np.clip(humidity(cfg, t) + cfg.met_noise * rng.standard_normal(t.size), 0.0, 100.0)
        tc = temperature(cfg, t) + cfg.met_noise * rng.standard_normal(t.size)
        pm = sensor_reading(cfg, truth, rh, tc, dev_factor, cfg.noise_std * rng.standard_normal(t.size))
        parts.append(MobileTable(np.full(t.size, f"LCS{d + 1}", dtype=object), t.copy(),
                                 np.full(t.size, lat[0]), np.full(t.size, lon[0]), pm, rh, tc))
    starts = np.arange(t_begin, t_end, cfg.fixed_interval_s, dtype=np.int64)
    n_sub = cfg.fixed_interval_s // cfg.sample_interval_s
    ref = truth.reshape(starts.size, n_sub).mean(axis=1)
    fixed = FixedTable(np.full(starts.size, sid, dtype=object), starts, ref)
    return MobileTable.concat(parts), fixed


def feature_geometry(sc: Scenario):
    """Roads as polylines; land use, land cover and buildings as rectangles per block."""
    cfg = sc.cfg
    g = sc.grid
    s = cfg.cell_size_m
    geoms = list(sc.roads.polylines())
    rng = _rng(cfg, 4)
    xs = g.origin.x + s / 4 + np.arange(cfg.n_cols) * s
    ys = g.origin.y + s / 4 + np.arange(cfg.n_rows) * s
    half = cfg.n_cols * s / 2
    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            r = math.hypot(cx, cy) / half
            u = rng.random()
            if u < 0.08:
                cover = "water"
            elif u < 0.08 + 0.1 + 0.3 * r:
                cover = "grass"
            else:
                cover = "artificial"
            geoms.append(Rect(f"land_cover.{cover}", x0, y0, x1, y1))
            if cover == "artificial":
                use = LAND_USE[int(rng.integers(len(LAND_USE)))]
                geoms.append(Rect(f"land_use.{use}", x0, y0, x1, y1))
                n_b = int(rng.integers(1, 6 if r < 0.5 else 3))
                for _ in range(n_b):
                    w, h = rng.uniform(20, 80, size=2)
                    bx = rng.uniform(x0 + 10, x1 - 10 - w)
                    by = rng.uniform(y0 + 10, y1 - 10 - h)
                    geoms.append(Rect("building_area", float(bx), float(by), float(bx + w), float(by + h)))
    return geoms


def truth_map(sc: Scenario, grid: GridSpec, time) -> PollutionMap:
    """Interval-mean truth at every cell centre of ``grid``."""
    cx, cy = grid.centers()
    vals = sc.truth.interval_mean(cx.ravel(), cy.ravel(), time.interval_start, time.interval_len)
    return PollutionMap(grid, time, vals.reshape(cx.shape), "truth")


def truth_table_csv(sc: Scenario, interval=None) -> str:
    cfg = sc.cfg
    interval = interval or cfg.fixed_interval_s
    cx, cy = sc.grid.centers()
    road = sc.truth.road_term(cx.ravel(), cy.ravel())
    cols = np.tile(np.arange(sc.grid.n_cols), sc.grid.n_rows)
    rows = np.repeat(np.arange(sc.grid.n_rows), sc.grid.n_cols)
    lines = ["col,row,interval_start,pm25"]
    starts = interval_starts(cfg, interval)
    for s, ts in zip(starts, format_time(starts)):
        v = sc.truth.interval_mean(cx.ravel(), cy.ravel(), s, interval, road=road)
        lines.extend(f"{c},{r},{ts},{val:.6f}" for c, r, val in zip(cols, rows, v))
    return "\n".join(lines) + "\n"


SCENARIO_FILES = ("stations.csv", "fixed.csv", "mobile.csv", "colocation_mobile.csv",
                  "colocation_fixed.csv", "features.csv", "truth.csv", "scenario.txt")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def generate(cfg: ScenarioConfig, out_dir) -> Path:
    """Write a complete scenario directory and its ``MANIFEST`` checksum list."""
    sc = build_scenario(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stations(out / "stations.csv", sc.station_infos())
    write_fixed(out / "fixed.csv", fixed_table(sc))
    write_mobile(out / "mobile.csv", mobile_table(sc))
    co_mob, co_fix = colocation_tables(sc)
    write_mobile(out / "colocation_mobile.csv", co_mob)
    write_fixed(out / "colocation_fixed.csv", co_fix)
    write_feature_geometry(out / "features.csv", feature_geometry(sc), sc.grid.ref)
    (out / "truth.csv").write_text(truth_table_csv(sc), encoding="utf-8")
    (out / "scenario.txt").write_text(cfg.to_text(), encoding="utf-8")
    with open(out / "MANIFEST", "w", encoding="utf-8", newline="\n") as fh:
        for name in SCENARIO_FILES:
            fh.write(f"{sha256_file(out / name)}  {name}\n")
    return out
