"""Calibration comparison on a synthetic co-location campaign.

Fits every calibration kind on repeated random train/test splits and prints
held-out r, R2, MAE, RMSE and MAPE per kind, averaged over the splits.

    python scripts/calibration_table.py --days 7 --splits 5 --humidity-coef 0.15
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

import numpy as np

from pmfuse import calibrate
from pmfuse.synthcity import ScenarioConfig, build_scenario, colocation_tables


@dataclass
class TableConfig:
    colocation_days: float = 7.0
    colocation_devices: int = 3
    humidity_coef: float = 0.15
    temp_coef: float = 0.3
    bias: float = 1.4
    noise_std: float = 3.0
    n_splits: int = 5
    train_fraction: float = 0.8
    seed: int = 20230301


def co_location(cfg: TableConfig) -> calibrate.CoLocationSet:
    sc = build_scenario(ScenarioConfig(
        colocation_days=cfg.colocation_days, colocation_devices=cfg.colocation_devices,
        humidity_coef=cfg.humidity_coef, temp_coef=cfg.temp_coef, bias=cfg.bias,
        noise_std=cfg.noise_std, seed=cfg.seed))
    mob, fix = colocation_tables(sc)
    return calibrate.match_colocation(mob, fix)


def table(cfg: TableConfig) -> dict:
    """context -> (r, r2, mae, rmse, mape) averaged over the splits."""
    pairs = co_location(cfg)
    acc = {}
    for s in range(cfg.n_splits):
        train, test = calibrate.split(pairs, s, cfg.train_fraction)
        rep = calibrate.evaluate(calibrate.fit_all(train, s), test)
        for ctx, m in rep.rows.items():
            acc.setdefault(ctx, []).append((m.r, m.r2, m.mae, m.rmse, m.mape))
    return {ctx: tuple(np.mean(v, axis=0)) for ctx, v in acc.items()}


def render(rows: dict) -> str:
    out = [f"{'context':<16}{'r':>8}{'R2':>9}{'MAE':>8}{'RMSE':>8}{'MAPE':>8}"]
    for ctx, (r, r2, mae, rmse, mape) in rows.items():
        out.append(f"{ctx:<16}{r:8.3f}{r2:9.3f}{mae:8.2f}{rmse:8.2f}{mape:8.3f}")
    return "\n".join(out)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    d = TableConfig()
    p.add_argument("--days", type=float, default=d.colocation_days)
    p.add_argument("--devices", type=int, default=d.colocation_devices)
    p.add_argument("--humidity-coef", type=float, default=d.humidity_coef)
    p.add_argument("--temp-coef", type=float, default=d.temp_coef)
    p.add_argument("--noise", type=float, default=d.noise_std)
    p.add_argument("--splits", type=int, default=d.n_splits)
    p.add_argument("--seed", type=int, default=d.seed)
    a = p.parse_args(argv)
    cfg = TableConfig(a.days, a.devices, a.humidity_coef, a.temp_coef, d.bias, a.noise, a.splits,
                      d.train_fraction, a.seed)
    print(render(table(cfg)))


if __name__ == "__main__":
    main()
