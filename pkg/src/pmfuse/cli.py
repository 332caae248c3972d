"""Command-line front end: one manifest, file-based stages.

Stages and their output directories under ``--out``::

    synth      scenario/   synthetic city (optional)
    ingest     ingest/     QC'd inputs and the ingest report
    calibrate  calibrate/  calibration report, models, calibrated mobile data
    sweep      sweep/      resolution sweep and the chosen (distance, interval)
    fuse       fuse/       model comparison, gain report, mapped concentrations
    map        maps/       map products, map statistics, bias report

Each stage reads only files written by earlier stages (or the manifest's
inputs) and writes a ``stage.log`` with the checksums of what it read and
wrote. ``all`` finishes with ``run_manifest.txt`` listing every output file.
"""

from __future__ import annotations

import argparse
import math
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import align, calibrate, fuse, ingest, learn, maps, synthcity
from .errors import ConfigError, DataError, EmptyDataError, InvariantError, PipelineError
from .geo import CellKey, GridSpec, cell_of, project, station_cells
from .synthcity import sha256_file

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
SEED_KEYS = ("seed.calibration_split", "seed.cv_folds", "seed.forest", "seed.scenario")
STAGES = ("synth", "ingest", "calibrate", "sweep", "fuse", "map")

INPUT_FILES = {
    "input.mobile": "mobile.csv",
    "input.fixed": "fixed.csv",
    "input.stations": "stations.csv",
    "input.colocation_mobile": "colocation_mobile.csv",
    "input.colocation_fixed": "colocation_fixed.csv",
    "input.features": "features.csv",
}

KNOWN = {
    "output.dir", "synth",
    *INPUT_FILES,
    "grid.origin_lat", "grid.origin_lon", "grid.cell_size_m", "grid.n_cols", "grid.n_rows",
    *SEED_KEYS,
    "calibration.kinds", "calibration.train_fraction", "calibration.split", "calibration.station",
    "calibration.apply", "calibration.interval_s",
    "sweep.distances_m", "sweep.intervals_s", "sweep.tolerance", "sweep.min_pairs",
    "fuse.models", "fuse.cv_folds", "fuse.cv_scheme", "fuse.min_mobile", "fuse.map_model",
    "maps.power", "maps.k", "maps.png", "maps.png_vmax", "maps.window_start", "maps.window_end",
}
HYPER_PREFIX = "fuse.hp."


# ---------------------------------------------------------------------------
# manifest


def parse_manifest_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; later keys override."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"manifest line {n}: expected 'key = value'", [f"line {n}"])
        k, v = (p.strip() for p in line.split("=", 1))
        if not k:
            raise ConfigError(f"manifest line {n}: empty key", [f"line {n}"])
        out[k] = v
    return out


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


@dataclass
class RunManifest:
    raw: dict
    base_dir: Path
    out_dir: Path
    synth: bool
    scenario: synthcity.ScenarioConfig | None
    inputs: dict
    grid: GridSpec | None
    seeds: dict
    calibration: dict
    sweep: dict
    fuse: dict
    maps: dict
    strict: bool = False
    threads: int = 1
    hyperparams: dict = field(default_factory=dict)

    def input_path(self, key) -> Path:
        return self.inputs[key]

    def features(self):
        return self.inputs["input.features"]


def _convert(raw, key, fn, default, bad):
    if key not in raw:
        return default
    try:
        return fn(raw[key])
    except (ValueError, TypeError):
        bad.append(key)
        return default


def build_manifest(raw: dict, base_dir, out_override=None, seed_overrides=(), strict=False, threads=1) -> RunManifest:
    """Validate a parsed manifest. Raises :class:`ConfigError` listing every bad key."""
    raw = dict(raw)
    bad_keys = []
    for item in seed_overrides:
        if "=" not in item:
            raise ConfigError(f"--seed-override expects k=v, got {item!r}", ["--seed-override"])
        k, v = (p.strip() for p in item.split("=", 1))
        k = k if k.startswith("seed.") else f"seed.{k}"
        if k not in SEED_KEYS:
            bad_keys.append(k)
        raw[k] = v
    base_dir = Path(base_dir)
    unknown = sorted(k for k in raw if k not in KNOWN and not k.startswith("scenario.") and not k.startswith(HYPER_PREFIX))
    if unknown:
        raise ConfigError("unknown manifest keys: " + ", ".join(unknown), unknown)
    if bad_keys:
        raise ConfigError("unknown seed keys: " + ", ".join(bad_keys), bad_keys)

    bad = []
    synth = _convert(raw, "synth", _bool, False, bad)
    out_dir = Path(out_override) if out_override else base_dir / raw.get("output.dir", "out")

    scenario = None
    scen_kv = {k[len("scenario."):]: v for k, v in raw.items() if k.startswith("scenario.")}
    if synth:
        if "seed.scenario" in raw:
            scen_kv["seed"] = raw["seed.scenario"]
        try:
            scenario = synthcity.ScenarioConfig.from_mapping(scen_kv)
            scenario.validate()
        except ConfigError as exc:
            bad.extend(exc.keys)

    seeds = {}
    needed = [k for k in SEED_KEYS if k != "seed.scenario" or synth]
    for k in needed:
        if k not in raw:
            bad.append(k)
            continue
        try:
            seeds[k] = int(raw[k])
        except ValueError:
            bad.append(k)

    inputs = {}
    for key, fname in INPUT_FILES.items():
        if key in raw:
            vals = [v.strip() for v in raw[key].split(",") if v.strip()] if key == "input.features" else [raw[key]]
            paths = [(base_dir / v) if not Path(v).is_absolute() else Path(v) for v in vals]
            missing = [p for p in paths if not p.exists()]
            if missing:
                bad.append(key)
            inputs[key] = paths if key == "input.features" else paths[0]
        elif synth:
            p = out_dir / "scenario" / fname
            inputs[key] = [p] if key == "input.features" else p
        elif key == "input.features":
            inputs[key] = []
        else:
            bad.append(key)

    grid = None
    gkeys = ("grid.origin_lat", "grid.origin_lon", "grid.cell_size_m", "grid.n_cols", "grid.n_rows")
    if any(k in raw for k in gkeys):
        vals = []
        for k, fn in zip(gkeys, (float, float, float, int, int)):
            if k not in raw:
                bad.append(k)
                continue
            v = _convert(raw, k, fn, None, bad)
            vals.append(v)
        if len(vals) == 5 and None not in vals:
            try:
                grid = GridSpec.from_geo_origin(*vals)
            except ConfigError as exc:
                bad.extend(exc.keys)
    elif scenario is not None:
        grid = synthcity.grid_for(scenario)
    else:
        bad.extend(gkeys)

    cal = dict(
        kinds=_convert(raw, "calibration.kinds", lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
                       calibrate.KINDS, bad),
        train_fraction=_convert(raw, "calibration.train_fraction", float, 0.8, bad),
        split=raw.get("calibration.split", "random"),
        station=raw.get("calibration.station"),
        apply=raw.get("calibration.apply", "best"),
        interval=_convert(raw, "calibration.interval_s", int, calibrate.COLOCATION_INTERVAL, bad),
    )
    if any(k not in calibrate.KINDS for k in cal["kinds"]) or not cal["kinds"]:
        bad.append("calibration.kinds")
    if not 0 < cal["train_fraction"] < 1:
        bad.append("calibration.train_fraction")
    if cal["split"] not in ("random", "chronological"):
        bad.append("calibration.split")
    if cal["apply"] != "best" and cal["apply"] not in cal["kinds"]:
        bad.append("calibration.apply")
    if cal["interval"] <= 0:
        bad.append("calibration.interval_s")

    sw = dict(
        distances=_convert(raw, "sweep.distances_m", _floats, align.SWEEP_DISTANCES, bad),
        intervals=_convert(raw, "sweep.intervals_s", _ints, align.SWEEP_INTERVALS, bad),
        tolerance=_convert(raw, "sweep.tolerance", float, align.SWEEP_TOLERANCE, bad),
        min_pairs=_convert(raw, "sweep.min_pairs", int, align.SWEEP_MIN_PAIRS, bad),
    )
    if not sw["distances"] or any(d <= 0 for d in sw["distances"]):
        bad.append("sweep.distances_m")
    if not sw["intervals"] or any(i <= 0 for i in sw["intervals"]):
        bad.append("sweep.intervals_s")
    if sw["tolerance"] < 0:
        bad.append("sweep.tolerance")

    fz = dict(
        models=_convert(raw, "fuse.models", lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
                        fuse.MODEL_KINDS, bad),
        cv_folds=_convert(raw, "fuse.cv_folds", int, 5, bad),
        cv_scheme=raw.get("fuse.cv_scheme", "kfold"),
        min_mobile=_convert(raw, "fuse.min_mobile", int, fuse.DEFAULT_MIN_MOBILE, bad),
        map_model=raw.get("fuse.map_model", "best"),
    )
    if not fz["models"] or any(k not in fuse.MODEL_KINDS for k in fz["models"]):
        bad.append("fuse.models")
    if fz["cv_folds"] < 2:
        bad.append("fuse.cv_folds")
    if fz["cv_scheme"] not in ("kfold", "loso"):
        bad.append("fuse.cv_scheme")
    if fz["min_mobile"] < 1:
        bad.append("fuse.min_mobile")
    if fz["map_model"] != "best" and fz["map_model"] not in fz["models"]:
        bad.append("fuse.map_model")

    hyper = {}
    for k, v in raw.items():
        if not k.startswith(HYPER_PREFIX):
            continue
        parts = k[len(HYPER_PREFIX):].split(".")
        if len(parts) != 2 or parts[0] not in fuse.MODEL_KINDS:
            bad.append(k)
            continue
        try:
            val = int(v) if v.lstrip("-").isdigit() else float(v)
        except ValueError:
            val = v
        hyper.setdefault(parts[0], {})[parts[1]] = val

    mp = dict(
        power=_convert(raw, "maps.power", float, maps.DEFAULT_POWER, bad),
        k=_convert(raw, "maps.k", int, None, bad),
        png=_convert(raw, "maps.png", _bool, False, bad),
        png_vmax=_convert(raw, "maps.png_vmax", float, 150.0, bad),
        window=None,
    )
    if ("maps.window_start" in raw) != ("maps.window_end" in raw):
        bad.extend(k for k in ("maps.window_start", "maps.window_end") if k not in raw)
    elif "maps.window_start" in raw:
        ws, we = ingest.parse_time([raw["maps.window_start"], raw["maps.window_end"]])
        if ws < 0:
            bad.append("maps.window_start")
        if we < 0:
            bad.append("maps.window_end")
        if ws >= 0 and we >= 0:
            mp["window"] = (int(ws), int(we))
    if not mp["power"] > 0:
        bad.append("maps.power")
    if mp["k"] is not None and mp["k"] < 1:
        bad.append("maps.k")

    if threads < 1:
        bad.append("--threads")
    if bad:
        keys = sorted(dict.fromkeys(bad))
        raise ConfigError("invalid manifest: " + ", ".join(keys), keys)
    return RunManifest(raw, base_dir, out_dir, synth, scenario, inputs, grid, seeds, cal, sw, fz, mp,
                       strict, threads, hyper)


def load_manifest(path, **kw) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}", ["--manifest"])
    return build_manifest(parse_manifest_text(path.read_text(encoding="utf-8")), path.parent, **kw)


# ---------------------------------------------------------------------------
# stage plumbing


class StageLog:
    """Collects input/output checksums; paths are written relative to the run."""

    def __init__(self, m: RunManifest, stage: str):
        self.m = m
        self.stage = stage
        self.dir = m.out_dir / stage_dir(stage)
        self.inputs = []
        self.outputs = []
        self.notes = []

    def _rel(self, p: Path) -> str:
        p = Path(p).resolve()
        for root in (self.m.out_dir.resolve(), self.m.base_dir.resolve()):
            try:
                return p.relative_to(root).as_posix()
            except ValueError:
                continue
        return p.name

    def read(self, p):
        p = Path(p)
        if not p.exists():
            raise ConfigError(f"{self.stage}: required input missing: {p}", [str(p)])
        self.inputs.append(p)
        return p

    def out(self, name) -> Path:
        p = self.dir / name
        self.outputs.append(p)
        return p

    def write_text(self, name, text):
        p = self.out(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return p

    def note(self, msg):
        self.notes.append(msg)

    def close(self):
        lines = [f"stage {self.stage}"]
        for p in sorted(set(self.inputs), key=self._rel):
            lines.append(f"input {self._rel(p)} {sha256_file(p)}")
        for p in sorted(set(self.outputs), key=self._rel):
            lines.append(f"output {self._rel(p)} {sha256_file(p)}")
        lines += [f"note {n}" for n in self.notes]
        with open(self.dir / "stage.log", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def stage_dir(stage):
    return {"synth": "scenario", "map": "maps"}.get(stage, stage)


@contextmanager
def stage(m: RunManifest, name: str):
    d = m.out_dir / stage_dir(name)
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    log = StageLog(m, name)
    yield log
    log.close()


@contextmanager
def executor_for(m: RunManifest):
    if m.threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=m.threads) as ex:
            yield ex


def _ingest_path(m, name):
    return m.out_dir / "ingest" / name


# ---------------------------------------------------------------------------
# stages


def cmd_synth(m: RunManifest):
    if m.scenario is None:
        raise ConfigError("synth requires 'synth = true' in the manifest", ["synth"])
    d = m.out_dir / "scenario"
    if d.exists():
        shutil.rmtree(d)
    synthcity.generate(m.scenario, d)
    log = StageLog(m, "synth")
    log.outputs = [d / f for f in synthcity.SCENARIO_FILES] + [d / "MANIFEST"]
    log.close()


def cmd_ingest(m: RunManifest):
    with stage(m, "ingest") as log:
        reports = []
        mob, rep = ingest.read_mobile(log.read(m.inputs["input.mobile"]), m.strict)
        reports.append(rep)
        ingest.write_mobile(log.out("mobile.csv"), mob)
        fix, rep = ingest.read_fixed(log.read(m.inputs["input.fixed"]), m.strict)
        reports.append(rep)
        ingest.write_fixed(log.out("fixed.csv"), fix)
        co_m, rep = ingest.read_mobile(log.read(m.inputs["input.colocation_mobile"]), m.strict)
        reports.append(rep)
        ingest.write_mobile(log.out("colocation_mobile.csv"), co_m)
        co_f, rep = ingest.read_fixed(log.read(m.inputs["input.colocation_fixed"]), m.strict)
        reports.append(rep)
        ingest.write_fixed(log.out("colocation_fixed.csv"), co_f)
        stations = ingest.load_stations(log.read(m.inputs["input.stations"]))
        ingest.write_stations(log.out("stations.csv"), stations)
        # feature files are validated here and copied verbatim
        ingest.load_features([log.read(p) for p in m.features()], m.grid)
        for i, p in enumerate(m.features()):
            shutil.copyfile(p, log.out(f"features_{i}.csv"))
        ingest.write_reports(reports, log.out("ingest_report.csv"))
        for r in reports:
            if r.rows_kept == 0:
                raise EmptyDataError(f"{r.file}: no rows survived quality control")


def _feature_files(m):
    return [_ingest_path(m, f"features_{i}.csv") for i in range(len(m.features()))]


def cmd_calibrate(m: RunManifest):
    with stage(m, "calibrate") as log, executor_for(m) as ex:
        co_m, _ = ingest.read_mobile(log.read(_ingest_path(m, "colocation_mobile.csv")))
        co_f, _ = ingest.read_fixed(log.read(_ingest_path(m, "colocation_fixed.csv")))
        station = m.calibration["station"]
        if station is None:
            ids = sorted(set(co_f.station_id.astype(str)))
            if len(ids) != 1:
                raise ConfigError("co-location data holds several stations; set calibration.station",
                                  ["calibration.station"])
            station = ids[0]
        pairs = calibrate.match_colocation(co_m, co_f, m.calibration["interval"], station)
        train, test = calibrate.split(pairs, m.seeds["seed.calibration_split"], m.calibration["train_fraction"],
                                      m.calibration["split"])
        models = calibrate.fit_all(train, m.seeds["seed.calibration_split"], m.calibration["kinds"], executor=ex)
        report = calibrate.evaluate(models, test)
        log.write_text("calibration_report.csv", report.to_csv())
        for kind, model in models.items():
            log.write_text(f"model_{kind}.txt", model.dumps())
        chosen = report.best_kind() if m.calibration["apply"] == "best" else m.calibration["apply"]
        log.write_text("applied.txt", f"{chosen}\n")
        # cross-device consistency of the raw co-located series on shared intervals
        devs = sorted(set(pairs.device_id.astype(str)))
        if len(devs) >= 2:
            common = None
            for dv in devs:
                s = set(pairs.interval_start[pairs.device_id.astype(str) == dv].tolist())
                common = s if common is None else common & s
            common = np.array(sorted(common), dtype=np.int64)
            series = {}
            for dv in devs:
                sel = pairs.device_id.astype(str) == dv
                lookup = dict(zip(pairs.interval_start[sel].tolist(), pairs.pm25_lcs[sel].tolist()))
                series[dv] = [lookup[t] for t in common.tolist()]
            if common.size >= 2:
                try:
                    names, mat = calibrate.cross_device_correlation(series)
                    log.write_text("cross_device.csv", calibrate.correlation_csv(names, mat))
                except DataError as exc:
                    log.note(f"cross-device correlation skipped: {exc}")
        mob, _ = ingest.read_mobile(log.read(_ingest_path(m, "mobile.csv")))
        ingest.write_mobile(log.out("mobile_calibrated.csv"), models[chosen].apply_table(mob))


def cmd_sweep(m: RunManifest):
    with stage(m, "sweep") as log, executor_for(m) as ex:
        mob, _ = ingest.read_mobile(log.read(m.out_dir / "calibrate" / "mobile_calibrated.csv"))
        fix, _ = ingest.read_fixed(log.read(_ingest_path(m, "fixed.csv")))
        stations = ingest.load_stations(log.read(_ingest_path(m, "stations.csv")))
        sw = m.sweep
        res = align.resolution_sweep(mob, fix, stations, m.grid.ref, sw["distances"], sw["intervals"],
                                     sw["tolerance"], sw["min_pairs"], executor=ex)
        log.write_text("sweep.csv", res.to_csv())
        log.write_text("sweep_pairs.csv", res.pairs_csv())
        log.note("overlapping station squares: a reading inside several squares counts toward each station")
        for n in res.notes:
            log.note(n)


def _station_lookup(stations, grid, distance):
    cells = station_cells(stations, grid.ref, distance)
    lookup = {}
    for c in cells:
        key = cell_of(c.center, grid)
        if key is not None:
            lookup[c.station_id] = key
    return cells, lookup


def cells_csv(samples) -> str:
    lines = ["col,row,interval_start,n,mean,min,max"]
    starts = ingest.format_time([s.time.interval_start for s in samples]) if samples else []
    for s, ts in zip(samples, starts):
        lines.append(f"{s.cell.col},{s.cell.row},{ts},{s.n_mobile},{s.mean!r},{s.min!r},{s.max!r}")
    return "\n".join(lines) + "\n"


def read_cells_csv(path, interval):
    import pandas as pd

    df = pd.read_csv(path, dtype={"interval_start": str}, float_precision="round_trip")
    starts = ingest.parse_time(df["interval_start"].to_numpy(dtype=object))
    return [align.CellSample(CellKey(int(c), int(r)), align.TimeKey(int(s), interval), int(n), float(a), float(lo), float(hi))
            for c, r, s, n, a, lo, hi in zip(df["col"], df["row"], starts, df["n"], df["mean"], df["min"], df["max"])]


def training_csv(t: fuse.TrainingTable) -> str:
    lines = ["cell,interval_start," + ",".join(t.feature_names) + ",fixed"]
    starts = ingest.format_time(t.interval_start)
    for c, s, row, y in zip(t.cells, starts, t.X, t.y):
        lines.append(f"{c},{s}," + ",".join(repr(float(v)) for v in row) + f",{float(y)!r}")
    return "\n".join(lines) + "\n"


def cmd_fuse(m: RunManifest):
    with stage(m, "fuse") as log, executor_for(m) as ex:
        distance, interval = align.read_sweep_choice(log.read(m.out_dir / "sweep" / "sweep.csv"))
        mob, _ = ingest.read_mobile(log.read(m.out_dir / "calibrate" / "mobile_calibrated.csv"))
        fix, _ = ingest.read_fixed(log.read(_ingest_path(m, "fixed.csv")))
        stations = ingest.load_stations(log.read(_ingest_path(m, "stations.csv")))
        grid = m.grid.retile(distance)
        layers = ingest.load_features([log.read(p) for p in _feature_files(m)], grid)
        cells, lookup = _station_lookup(stations, grid, distance)
        samples = align.join_fixed(align.aggregate(mob, cells, interval, grid.ref), fix, interval)
        outside = sorted({s.cell for s in samples} - set(lookup))
        if outside:
            log.note("stations outside the grid, not used for training: " + " ".join(outside))
        samples = [s for s in samples if s.cell in lookup]
        table = fuse.build_table(samples, layers, lookup, m.fuse["min_mobile"])
        log.write_text("training_table.csv", training_csv(table))
        fz = m.fuse
        comparison = fuse.compare_models(table, m.seeds["seed.cv_folds"], fz["models"], fz["cv_folds"],
                                         fz["cv_scheme"], m.hyperparams, m.seeds["seed.forest"], executor=ex)
        log.write_text("model_comparison.csv", comparison.to_csv())
        kind = comparison.best if fz["map_model"] == "best" else fz["map_model"]
        model = fuse.fit_kind(kind, table.dataset(), m.seeds["seed.forest"], m.hyperparams)
        log.write_text("mapping_model.txt", learn.dumps(model))
        gbt = model if kind == "gbt" else fuse.fit_kind("gbt", table.dataset(), m.seeds["seed.forest"], m.hyperparams)
        log.write_text("gain_report.csv", fuse.gain_csv(fuse.gain_report(gbt)))
        tess = align.aggregate(mob, grid, interval)
        log.write_text("cells.csv", cells_csv(tess))
        mapped = fuse.predict_mapped(model, tess, layers, fz["min_mobile"])
        log.write_text("mapped.csv", fuse.mapped_csv(mapped))
        log.write_text("resolution.txt", f"distance_m {distance:g}\ninterval_s {interval}\nmodel {kind}\n")


def _in_window(t, window):
    # slices whose interval starts inside [start, end)
    return window is None or window[0] <= t < window[1]


def stats_csv(series) -> str:
    lines = [maps.MapStats.CSV_HEADER]
    for st in series:
        lines += [s.csv_row() for s in st.slices]
    return "\n".join(lines) + "\n"


def cmd_map(m: RunManifest):
    with stage(m, "map") as log:
        distance, interval = align.read_sweep_choice(log.read(m.out_dir / "sweep" / "sweep.csv"))
        grid = m.grid.retile(distance)
        fix, _ = ingest.read_fixed(log.read(_ingest_path(m, "fixed.csv")))
        stations = ingest.load_stations(log.read(_ingest_path(m, "stations.csv")))
        cells = read_cells_csv(log.read(m.out_dir / "fuse" / "cells.csv"), interval)
        mapped = fuse.read_mapped_csv(log.read(m.out_dir / "fuse" / "mapped.csv"), interval)
        pts = {s.station_id: project(s.pos, grid.ref) for s in stations}
        fixed_by_t = {}
        for (sid, t0), v in sorted(align.fixed_means(fix, interval).items(), key=lambda kv: (kv[0][1], kv[0][0])):
            if sid in pts:
                fixed_by_t.setdefault(t0, []).append((pts[sid], v))
        cells_by_t, mapped_by_t = {}, {}
        for s in cells:
            cells_by_t.setdefault(s.time.interval_start, []).append(s)
        for v in mapped:
            mapped_by_t.setdefault(v.interval_start, []).append(v)
        times = sorted(set(fixed_by_t) | set(cells_by_t))
        products = {src: [] for src in maps.SOURCES}
        mp = m.maps
        for t0 in times:
            tk = align.TimeKey(int(t0), interval)
            for src in maps.SOURCES:
                try:
                    pm = maps.build_map(src, grid, tk, fixed_by_t.get(t0, ()), cells_by_t.get(t0, ()),
                                        mapped_by_t.get(t0, ()), mp["power"], mp["k"])
                except EmptyDataError:
                    continue
                if np.any(pm.values < 0) or np.any(pm.values > 500):
                    raise InvariantError(f"{src} map at {t0} leaves the 0-500 range")
                products[src].append(pm)
                name = maps.map_filename(src, t0, interval)
                log.write_text(name, maps.map_csv(pm))
                if mp["png"]:
                    maps.write_png(pm, log.out(name[:-4] + ".png"), 0.0, mp["png_vmax"])
        series = {src: maps.map_stats(v) for src, v in products.items() if v}
        if not series:
            raise EmptyDataError("no map could be built for any interval")
        log.write_text("map_stats.csv", stats_csv(series.values()))
        lines = ["source,window_start,window_end,n_slices,variation_mean,variation_std,mean,std"]
        windows = [(None, "all")]
        if mp["window"] is not None:
            windows.append((mp["window"], "window"))
        for win, _ in windows:
            for src in maps.SOURCES:
                sl = [p for p in products.get(src, []) if _in_window(p.time.interval_start, win)]
                if not sl:
                    continue
                st = maps.map_stats(sl)
                ws, we = (ingest.format_time([sl[0].time.interval_start, sl[-1].time.interval_start])
                          if win is None else ingest.format_time(list(win)))
                lines.append(f"{src},{ws},{we},{len(sl)},{st.variation_mean!r},{st.variation_std!r},"
                             f"{st.mean!r},{st.std!r}")
        log.write_text("variation.csv", "\n".join(lines) + "\n")
        common = sorted(set.intersection(*[{p.time.interval_start for p in v} for v in products.values() if v]))
        means = {src: [float(np.mean(p.values)) for p in v if p.time.interval_start in set(common)]
                 for src, v in products.items() if v}
        if common:
            bias = maps.bias_report(means)
            body = ["comparison,percent"] + [f"{k},{v!r}" for k, v in bias.items()]
            log.write_text("bias_report.csv", "\n".join(body) + "\n")
        else:
            log.note("no interval holds all map products; bias report skipped")


def write_run_manifest(m: RunManifest) -> Path:
    files = sorted(p for p in m.out_dir.rglob("*") if p.is_file() and p.name != "run_manifest.txt")
    path = m.out_dir / "run_manifest.txt"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in files:
            fh.write(f"{sha256_file(p)}  {p.relative_to(m.out_dir).as_posix()}\n")
    return path


def cmd_all(m: RunManifest):
    m.out_dir.mkdir(parents=True, exist_ok=True)
    if m.synth:
        cmd_synth(m)
    cmd_ingest(m)
    cmd_calibrate(m)
    cmd_sweep(m)
    cmd_fuse(m)
    cmd_map(m)
    write_run_manifest(m)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "fuse": cmd_fuse,
    "map": cmd_map,
    "all": cmd_all,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, ["arguments"])


def make_parser():
    p = _Parser(prog="pmfuse", description="Fuse mobile and fixed PM2.5 monitoring into pollution maps.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--manifest", required=True, help="run manifest (key = value lines)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=1, help="worker threads inside a stage")
    p.add_argument("--strict", action="store_true", help="fail on malformed input rows instead of skipping them")
    p.add_argument("--seed-override", action="append", default=[], metavar="K=V",
                   help="override a seed.* key, repeatable")
    return p


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        m = load_manifest(args.manifest, out_override=args.out, seed_overrides=args.seed_override,
                          strict=args.strict, threads=args.threads)
        m.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](m)
        if args.command != "all":
            write_run_manifest(m)
    except ConfigError as exc:
        print(f"pmfuse: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"pmfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, AssertionError) as exc:
        print(f"pmfuse: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except PipelineError as exc:
        print(f"pmfuse: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
