import dataclasses

import numpy as np
import pytest

from pmfuse import ingest
from pmfuse.errors import ConfigError
from pmfuse.geo import GridSpec, ProjectedPoint
from pmfuse.align import TimeKey
from pmfuse.synthcity import (
    Plume,
    ScenarioConfig,
    build_scenario,
    colocation_tables,
    feature_geometry,
    fixed_table,
    generate,
    mobile_table,
    taxi_walk,
    truth_map,
)


def small(**kw):
    base = dict(n_cols=8, n_rows=8, n_stations=4, n_taxis=6, duration_s=1800, colocation_days=0.2,
                colocation_devices=2)
    base.update(kw)
    return ScenarioConfig(**base)


def test_same_seed_same_bytes(tmp_path):
    a = generate(small(), tmp_path / "a")
    b = generate(small(), tmp_path / "b")
    assert (a / "MANIFEST").read_bytes() == (b / "MANIFEST").read_bytes()
    c = generate(small(seed=7), tmp_path / "c")
    assert (a / "MANIFEST").read_bytes() != (c / "MANIFEST").read_bytes()


def test_generated_files_pass_ingest(tmp_path):
    out = generate(small(), tmp_path)
    for name in ("mobile.csv", "colocation_mobile.csv"):
        _, rep = ingest.read_mobile(out / name, strict=True)
        assert rep.rows_dropped == 0
    for name in ("fixed.csv", "colocation_fixed.csv"):
        _, rep = ingest.read_fixed(out / name, strict=True)
        assert rep.rows_dropped == 0
    assert len(ingest.load_stations(out / "stations.csv")) == 4


def test_noiseless_unit_bias_reads_truth():
    cfg = small(noise_std=0.0, bias=1.0, device_bias_spread=0.0, humidity_coef=0.0, temp_coef=0.0)
    sc = build_scenario(cfg)
    mob = mobile_table(sc)
    n = int(cfg.duration_s // cfg.sample_interval_s)
    t = cfg.start_epoch + np.arange(n) * cfg.sample_interval_s
    for k in range(cfg.n_taxis):
        pos = taxi_walk(cfg, sc.roads, k)
        np.testing.assert_allclose(mob.pm25[k * n:(k + 1) * n], sc.truth(pos[:, 0], pos[:, 1], t), rtol=1e-12)


def test_bias_inflates_colocated_readings():
    cfg = small(humidity_coef=0.0, temp_coef=0.0, device_bias_spread=0.0, colocation_days=1.0)
    mob, fix = colocation_tables(build_scenario(cfg))
    excess = mob.pm25.mean() / fix.pm25.mean() - 1.0
    assert excess == pytest.approx(0.40, abs=0.01)


def test_constant_field_gives_constant_map():
    cfg = small(n_plumes=0, road_amplitude=(0.0, 0.0, 0.0), diurnal_amplitude=0.0)
    sc = build_scenario(cfg)
    m = truth_map(sc, sc.grid, TimeKey(cfg.start_epoch, 300))
    assert np.ptp(m.values) == 0.0
    assert m.values[0, 0] == pytest.approx(cfg.background)


def one_plume(vx=0.0, vy=0.0):
    p = Plume(x0=-375.0, y0=625.0, vx=vx, vy=vy, amplitude=80.0, sigma=300.0)
    return small(plumes=(p,), road_amplitude=(0.0, 0.0, 0.0), diurnal_amplitude=0.0)


def argmax_cell(m):
    r, c = np.unravel_index(np.argmax(m.values), m.values.shape)
    return int(c), int(r)


def test_single_plume_peaks_at_its_cell():
    cfg = one_plume()
    sc = build_scenario(cfg)
    m = truth_map(sc, sc.grid, TimeKey(cfg.start_epoch, 300))
    col, row, _ = sc.grid.cell_indices(np.array([-375.0]), np.array([625.0]))
    assert argmax_cell(m) == (int(col[0]), int(row[0]))


def test_drifted_plume_moves_by_drift_times_dt():
    cfg = one_plume(vx=2.0, vy=-1.0)
    sc = build_scenario(cfg)
    dt = 500.0
    grid = GridSpec(ProjectedPoint(-2000.0, -2000.0), 50.0, 80, 80, sc.grid.ref)
    m0 = truth_map(sc, grid, TimeKey(cfg.start_epoch, 1))
    m1 = truth_map(sc, grid, TimeKey(cfg.start_epoch + int(dt), 1))
    (c0, r0), (c1, r1) = argmax_cell(m0), argmax_cell(m1)
    assert ((c1 - c0) * 50.0, (r1 - r0) * 50.0) == (2.0 * dt, -1.0 * dt)
    assert sc.truth.plume_center(0, cfg.start_epoch + dt) == pytest.approx((-375.0 + 1000.0, 625.0 - 500.0))


def test_taxis_stay_on_roads():
    cfg = small()
    sc = build_scenario(cfg)
    a, b = sc.roads.segments()
    for k in range(cfg.n_taxis):
        pos = taxi_walk(cfg, sc.roads, k)
        ab = b - a
        t = np.clip(((pos[:, None, :] - a[None]) * ab[None]).sum(-1) / (ab * ab).sum(-1)[None], 0, 1)
        d = np.hypot(*(pos[:, None, :] - (a[None] + t[..., None] * ab[None])).transpose(2, 0, 1)).min(axis=1)
        assert d.max() < 1e-6


def test_road_length_positive_where_sampled():
    cfg = small()
    sc = build_scenario(cfg)
    layers = {l.name: l for l in ingest.rasterize_features(feature_geometry(sc), sc.grid)}
    road = sum(v.values for k, v in layers.items() if k.startswith("road_length."))
    mob = mobile_table(sc)
    from pmfuse.geo import project_arrays

    x, y = project_arrays(mob.lat, mob.lon, sc.grid.ref)
    col, row, inside = sc.grid.cell_indices(x, y)
    assert inside.all()
    assert (road[row, col] > 0).all()


def coverage(cfg):
    sc = build_scenario(cfg)
    hit = np.zeros((cfg.n_rows, cfg.n_cols), dtype=bool)
    for k in range(cfg.n_taxis):
        pos = taxi_walk(cfg, sc.roads, k)
        col, row, inside = sc.grid.cell_indices(pos[:, 0], pos[:, 1])
        hit[row[inside], col[inside]] = True
    return hit.mean()


def test_coverage_monotone_in_taxis_and_duration():
    cov = [coverage(small(n_taxis=n)) for n in (2, 6, 18)]
    assert cov == sorted(cov)
    cov = [coverage(small(duration_s=d)) for d in (600, 1800, 5400)]
    assert cov == sorted(cov)


def test_fixed_series_matches_truth_map_at_station_cell():
    cfg = small()
    sc = build_scenario(cfg)
    fix = fixed_table(sc)
    ids = [sid for sid, _ in sc.stations]
    for s in np.unique(fix.t)[:3]:
        m = truth_map(sc, sc.grid, TimeKey(int(s), cfg.fixed_interval_s))
        for sid, p in sc.stations:
            col, row, _ = sc.grid.cell_indices(np.array([p.x]), np.array([p.y]))
            v = fix.pm25[(fix.t == s) & (fix.station_id == sid)][0]
            assert v == pytest.approx(m.values[row[0], col[0]], rel=0.01)
    assert set(fix.station_id) == set(ids)


def test_validation_lists_fields():
    with pytest.raises(ConfigError) as exc:
        build_scenario(small(n_taxis=0, noise_std=-1.0))
    assert "scenario.n_taxis" in str(exc.value) and "scenario.noise_std" in str(exc.value)


def test_config_text_round_trip():
    cfg = small(plumes=(Plume(1.0, 2.0, 0.5, 0.0, 40.0, 300.0),))
    kv = {}
    for line in cfg.to_text().splitlines():
        k, v = line.split(" = ", 1)
        kv[k[len("scenario."):]] = v
    back = ScenarioConfig.from_mapping(kv)
    assert dataclasses.asdict(back) == dataclasses.asdict(cfg)
