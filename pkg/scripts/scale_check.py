"""Throughput check: ingest and aggregate a large synthetic mobile CSV.

Writes ``n_rows`` records (a pre-formatted block repeated with distinct device
prefixes), then times a streaming pass that reads, QC-filters, projects and
aggregates them onto a 500 m grid in 5-minute buckets. The pass runs in a
child process so its peak resident memory is measured on its own.

    python scripts/scale_check.py --rows 10000000
"""

from __future__ import annotations

import argparse
import json
import resource
import subprocess
import sys
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass
class ScaleConfig:
    n_rows: int = 10_000_000
    block_rows: int = 500_000
    seed: int = 0
    cell_size_m: float = 500.0
    n_cols: int = 40
    n_rows_grid: int = 40
    interval_s: int = 300
    chunksize: int = 500_000


def write_records(cfg: ScaleConfig, path: Path) -> None:
    import pandas as pd

    from pmfuse.ingest import MOBILE_COLUMNS, format_time

    rng = np.random.default_rng(cfg.seed)
    n = cfg.block_rows
    t = 1677657600 + np.sort(rng.integers(0, 86_400, n))
    half = cfg.n_cols * cfg.cell_size_m / 2 / 111_195.0
    df = pd.DataFrame({
        "device_id": np.char.add("{P}", np.char.zfill((rng.integers(0, 2000, n)).astype(str), 4)),
        "timestamp": format_time(t),
        "lat": np.round(23.13 + rng.uniform(-half, half, n), 6),
        "lon": np.round(113.30 + rng.uniform(-half, half, n), 6),
        "pm25": np.round(rng.gamma(4.0, 12.0, n), 2),
        "rh": np.round(rng.uniform(40, 95, n), 1),
        "temp": np.round(rng.uniform(10, 35, n), 1),
    }, columns=list(MOBILE_COLUMNS))
    block = df.to_csv(index=False, header=False, lineterminator="\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(MOBILE_COLUMNS) + "\n")
        written, k = 0, 0
        while written < cfg.n_rows:
            take = min(n, cfg.n_rows - written)
            text = block if take == n else "".join(block.splitlines(keepends=True)[:take])
            fh.write(text.replace("{P}", f"D{k:03d}-"))
            written += take
            k += 1


def stream_pass(cfg: ScaleConfig, path: Path) -> dict:
    """Read, QC, project and aggregate in chunks; returns counts and timings."""
    from pmfuse.align import StreamingAggregator, add_to_aggregator
    from pmfuse.geo import GeoPoint, GridSpec, ProjectedPoint, project_arrays
    from pmfuse.ingest import IngestReport, iter_mobile

    ref = GeoPoint(23.13, 113.30)
    w = cfg.n_cols * cfg.cell_size_m
    grid = GridSpec(ProjectedPoint(-w / 2, -w / 2), cfg.cell_size_m, cfg.n_cols, cfg.n_rows_grid, ref)
    t0 = time.perf_counter()
    report = IngestReport(path.name)
    agg = StreamingAggregator(cfg.interval_s)
    for chunk in iter_mobile(path, chunksize=cfg.chunksize, report=report):
        x, y = project_arrays(chunk.lat, chunk.lon, ref)
        add_to_aggregator(agg, x, y, chunk.t, chunk.pm25, grid)
    cell, start, n, total, vmin, vmax = agg.arrays()
    elapsed = time.perf_counter() - t0
    peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return dict(rows_parsed=report.rows_parsed, rows_kept=report.rows_kept, buckets=int(cell.size),
                readings=int(n.sum()), seconds=elapsed, peak_mb=peak_kb / 1024.0)


def run(cfg: ScaleConfig, workdir=None) -> dict:
    """Write the records, then measure the streaming pass in a fresh interpreter."""
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        path = Path(tmp) / "mobile.csv"
        write_records(cfg, path)
        code = ("import json, sys; from pathlib import Path; sys.path.insert(0, %r); import scale_check as s; "
                "cfg = s.ScaleConfig(**json.loads(sys.argv[1])); "
                "print(json.dumps(s.stream_pass(cfg, Path(sys.argv[2]))))" % str(Path(__file__).parent))
        out = subprocess.run([sys.executable, "-c", code, json.dumps(asdict(cfg)), str(path)],
                             check=True, capture_output=True, text=True)
        return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=ScaleConfig.n_rows)
    p.add_argument("--workdir", default=None)
    args = p.parse_args()
    res = run(ScaleConfig(n_rows=args.rows), args.workdir)
    for k, v in res.items():
        print(f"{k:12s} {v:.2f}" if isinstance(v, float) else f"{k:12s} {v}")


if __name__ == "__main__":
    main()
