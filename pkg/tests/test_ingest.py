import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmfuse import ingest
from pmfuse.errors import ConfigError, IngestError
from pmfuse.geo import GeoPoint, GridSpec, ProjectedPoint
from pmfuse.ingest import Polyline, Rect, rasterize_features


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_fixed_row_and_qc(tmp_path):
    p = write(tmp_path, "fixed.csv",
              "station_id,timestamp,pm25\n"
              "S01,2023-03-01T09:00:00Z,42.0\n"
              "S01,2023-03-01T09:05:00Z,612.0\n"
              "S01,2023-03-01T09:10:00Z,-3.0\n")
    recs, rep = ingest.load_fixed(p)
    assert len(recs) == 1
    r = recs[0]
    assert (r.station_id, r.pm25) == ("S01", 42.0)
    assert r.t == 1677661200
    assert rep.rows_parsed == 3 and rep.rows_kept == 1
    assert rep.drop_reasons == {"pm25_range": 2}


MOBILE_HEAD = "device_id,timestamp,lat,lon,pm25,rh,temp\n"


def test_mobile_five_row_fixture(tmp_path):
    p = write(tmp_path, "mobile.csv", MOBILE_HEAD +
              "T1,2023-03-01T09:00:00Z,23.1,113.3,40.0,60,20\n"
              "T1,2023-03-01T09:00:15Z,23.1,113.3,501,60,20\n"
              "T1,2023-03-01T09:00:30Z,23.1,113.3,40.0,120,20\n"
              "T1,2023-03-01T09:00:45Z,23.1,113.3,40.0,60,75\n"
              "T1,not-a-time,23.1,113.3,40.0,60,20\n")
    recs, rep = ingest.load_mobile(p)
    assert len(recs) == 1
    assert recs[0].pm25_raw == 40.0 and recs[0].pos == GeoPoint(23.1, 113.3)
    assert rep.drop_reasons == {"pm25_range": 1, "rh_range": 1, "temp_range": 1, "malformed": 1}
    assert rep.rows_parsed == rep.rows_kept + rep.rows_dropped == 5


def test_strict_mode_is_fatal(tmp_path):
    p = write(tmp_path, "m.csv", MOBILE_HEAD + "T1,2023-03-01T09:00:00Z,23.1,abc,40,60,20\n")
    with pytest.raises(IngestError):
        ingest.read_mobile(p, strict=True)
    _, rep = ingest.read_mobile(p)
    assert rep.drop_reasons == {"malformed": 1}


def test_missing_file_and_bad_header(tmp_path):
    with pytest.raises(IngestError):
        ingest.read_fixed(tmp_path / "nope.csv")
    p = write(tmp_path, "f.csv", "id,time,value\n")
    with pytest.raises(IngestError):
        ingest.read_fixed(p)


def test_ingest_report_csv(tmp_path):
    rep = ingest.IngestReport("x.csv", 5, 3, {"rh_range": 1, "malformed": 1})
    out = tmp_path / "r.csv"
    ingest.write_reports([rep], out)
    assert out.read_text().splitlines() == [
        "file,rows_parsed,rows_kept,rows_dropped,drop_reason_counts",
        "x.csv,5,3,2,malformed=1;rh_range=1",
    ]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 600), st.floats(-20, 130), st.floats(-30, 80)), min_size=1, max_size=30))
def test_qc_idempotent_and_counts(rows):
    recs = [ingest.MobileRecord("T", 1_677_661_200 + i, GeoPoint(23.0, 113.0), pm, rh, tc)
            for i, (pm, rh, tc) in enumerate(rows)]
    once = ingest.qc_mobile(recs)
    assert ingest.qc_mobile(once) == once
    assert all(0 <= r.pm25_raw <= 500 and 0 <= r.rh <= 100 and -10 <= r.temp <= 60 for r in once)


def test_chunked_matches_whole(tmp_path):
    rng = np.random.default_rng(3)
    lines = [MOBILE_HEAD.strip()]
    for i in range(500):
        lines.append(f"T{i % 7},2023-03-01T09:{i // 60 % 60:02d}:{i % 60:02d}Z,23.1,113.3,"
                     f"{rng.uniform(-20, 520):.2f},{rng.uniform(0, 110):.1f},20")
    p = write(tmp_path, "m.csv", "\n".join(lines) + "\n")
    rep_a = ingest.IngestReport("m.csv")
    a = ingest.MobileTable.concat(ingest.iter_mobile(p, chunksize=37, report=rep_a))
    b, rep_b = ingest.read_mobile(p)
    assert np.array_equal(a.pm25, b.pm25) and rep_a.drop_reasons == rep_b.drop_reasons
    assert rep_b.rows_parsed == rep_b.rows_kept + rep_b.rows_dropped == 500


def test_round_trip_writers(tmp_path):
    t = ingest.FixedTable(np.array(["A", "B"], dtype=object), np.array([1_677_661_200, 1_677_661_500]),
                          np.array([12.5, 30.25]))
    ingest.write_fixed(tmp_path / "f.csv", t)
    back, _ = ingest.read_fixed(tmp_path / "f.csv")
    assert list(back.station_id) == ["A", "B"] and np.allclose(back.pm25, t.pm25)
    st_ = [ingest.StationInfo("S01", GeoPoint(23.1, 113.2))]
    ingest.write_stations(tmp_path / "s.csv", st_)
    assert ingest.load_stations(tmp_path / "s.csv") == st_


def test_duplicate_station(tmp_path):
    p = write(tmp_path, "s.csv", "station_id,lat,lon\nS1,23,113\nS1,23.1,113\n")
    with pytest.raises(IngestError):
        ingest.load_stations(p)


def g4():
    return GridSpec(ProjectedPoint(0.0, 0.0), 100.0, 4, 3)


def test_building_covering_one_cell():
    (layer,) = rasterize_features([Rect("building_area", 100, 100, 200, 200)], g4())
    expected = np.zeros((3, 4))
    expected[1, 1] = 100.0 ** 2
    assert np.array_equal(layer.values, expected)


def test_segment_split_evenly():
    (layer,) = rasterize_features([Polyline("road_length.primary", ((50.0, 50.0), (150.0, 50.0)))], g4())
    assert layer.values[0, 0] == pytest.approx(50.0) and layer.values[0, 1] == pytest.approx(50.0)
    assert layer.values.sum() == pytest.approx(100.0)


def test_diagonal_segment():
    (layer,) = rasterize_features([Polyline("road_length.secondary", ((100.0, 100.0), (200.0, 200.0)))], g4())
    # clip to the cell [100,200)^2 and measure by hand: corner to corner
    assert layer.values[1, 1] == pytest.approx(141.4213562373095, rel=1e-12)
    assert layer.values.sum() == pytest.approx(141.4213562373095, rel=1e-12)


def test_unknown_layer():
    with pytest.raises(ConfigError):
        rasterize_features([Rect("parks", 0, 0, 1, 1)], g4())


@settings(max_examples=150)
@given(st.lists(st.tuples(st.floats(-100, 500), st.floats(-100, 400)), min_size=2, max_size=6))
def test_road_length_conservation(pts):
    g = g4()
    (layer,) = rasterize_features([Polyline("road_length.primary", tuple(pts))], g)
    # independent oracle: dense sampling of each segment, length share inside the box
    total = 0.0
    for (xa, ya), (xb, yb) in zip(pts[:-1], pts[1:]):
        n = 20000
        s = (np.arange(n) + 0.5) / n
        x, y = xa + s * (xb - xa), ya + s * (yb - ya)
        inside = (x >= 0) & (x < 400) & (y >= 0) & (y < 300)
        total += math.hypot(xb - xa, yb - ya) * inside.mean()
    assert layer.values.sum() == pytest.approx(total, rel=1e-3, abs=0.1)
    assert np.all(layer.values >= 0)


def test_feature_files(tmp_path):
    g = GridSpec.from_geo_origin(23.0, 113.0, 100.0, 4, 3)
    geoms = [Rect("land_cover.grass", -200, -150, -100, -50),
             Polyline("road_length.primary", ((-150.0, -100.0), (50.0, -100.0)))]
    ingest.write_feature_geometry(tmp_path / "geo.csv", geoms, g.ref)
    write(tmp_path, "cells.csv", "layer,col,row,value\nbuilding_area,3,2,55.5\n")
    layers = {l.name: l for l in ingest.load_features([tmp_path / "geo.csv", tmp_path / "cells.csv"], g)}
    assert sorted(layers) == ["building_area", "land_cover.grass", "road_length.primary"]
    assert layers["land_cover.grass"].at(0, 0) == pytest.approx(1e4, rel=1e-5)
    assert layers["road_length.primary"].values.sum() == pytest.approx(200.0, rel=1e-5)
    assert layers["building_area"].at(3, 2) == 55.5
