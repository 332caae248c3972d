"""Generate a synthetic city and push it through the whole pipeline.

Prints the selected resolution, the model comparison and the map summaries
from the run directory. Scenario fields can be overridden on the command
line, e.g.

    python scripts/run_scenario.py --out runs/demo --set n_taxis=200 --set noise_std=5
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from pmfuse import cli

HERE = Path(__file__).resolve().parent
BUNDLED = HERE.parent / "manifests" / "small_scenario.txt"


@dataclass
class RunConfig:
    manifest: Path = BUNDLED
    out: Path | None = None
    threads: int = 1
    overrides: dict = field(default_factory=dict)  # ScenarioConfig field -> text value


def manifest_text(cfg: RunConfig) -> str:
    text = cfg.manifest.read_text(encoding="utf-8")
    extra = "".join(f"scenario.{k} = {v}\n" for k, v in cfg.overrides.items())
    if not extra:
        return text
    kept = [ln for ln in text.splitlines()
            if not any(ln.strip().startswith(f"scenario.{k} ") or ln.strip().startswith(f"scenario.{k}=")
                       for k in cfg.overrides)]
    return "\n".join(kept) + "\n" + extra


def summary(out: Path) -> str:
    parts = []
    for rel in ("sweep/sweep.csv", "fuse/model_comparison.csv", "maps/bias_report.csv", "maps/variation.csv"):
        p = out / rel
        if p.exists():
            parts.append(f"== {rel}\n{p.read_text(encoding='utf-8').rstrip()}")
    return "\n\n".join(parts)


def run(cfg: RunConfig) -> Path:
    out = Path(cfg.out) if cfg.out else Path(tempfile.mkdtemp(prefix="pmfuse-run-"))
    out.mkdir(parents=True, exist_ok=True)
    mpath = out / "manifest.txt"
    # relative keys such as output.dir resolve against the manifest's folder
    mpath.write_text(manifest_text(cfg), encoding="utf-8")
    argv = ["all", "--manifest", str(mpath), "--out", str(out), "--threads", str(cfg.threads)]
    code = cli.main(argv)
    if code:
        raise SystemExit(code)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--manifest", type=Path, default=BUNDLED)
    p.add_argument("--out", type=Path)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE")
    a = p.parse_args(argv)
    over = {}
    for item in a.set:
        k, sep, v = item.partition("=")
        if not sep:
            p.error(f"--set expects FIELD=VALUE, got {item!r}")
        over[k.strip()] = v.strip()
    out = run(RunConfig(a.manifest, a.out, a.threads, over))
    print(f"run directory: {out}\n")
    print(summary(out))


if __name__ == "__main__":
    sys.exit(main())
