import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmfuse import calibrate, learn
from pmfuse.calibrate import CoLocationSet
from pmfuse.errors import EmptyDataError, SingularFitError, UndefinedStatisticError
from pmfuse.ingest import FixedTable, MobileRecord, MobileTable
from pmfuse.geo import GeoPoint

T0 = 1_677_661_200  # 2023-03-01T09:00:00Z, a 300 s boundary


def mobile(ts, pm, dev="D1", rh=60.0, temp=20.0):
    n = len(ts)
    return MobileTable(np.array([dev] * n, dtype=object), np.array(ts, dtype=np.int64), np.full(n, 23.0),
                       np.full(n, 113.0), np.array(pm, float), np.full(n, rh), np.full(n, temp))


def fixed(ts, pm):
    return FixedTable(np.array(["S01"] * len(ts), dtype=object), np.array(ts, dtype=np.int64), np.array(pm, float))


def test_match_examples():
    s = calibrate.match_colocation(mobile([T0 + 10], [40.0]), fixed([T0], [44.0]))
    assert len(s) == 1 and s.pm25_lcs[0] == 40.0 and s.reference[0] == 44.0
    s = calibrate.match_colocation(mobile([T0 + 10, T0 + 200], [40.0, 60.0]), fixed([T0 + 5], [55.0]))
    assert (s.pm25_lcs[0], s.reference[0]) == (50.0, 55.0)
    s = calibrate.match_colocation(mobile([T0 + 10], [40.0]), fixed([T0, T0 + 300], [44.0, 70.0]))
    assert len(s) == 1 and s.interval_start[0] == T0
    with pytest.raises(EmptyDataError):
        calibrate.match_colocation(mobile([T0 + 900], [40.0]), fixed([T0], [44.0]))


def test_match_pairs_each_device_separately():
    m = MobileTable.concat([mobile([T0, T0 + 15], [10.0, 20.0], "A"), mobile([T0 + 30], [90.0], "B")])
    s = calibrate.match_colocation(m, fixed([T0], [30.0]))
    assert list(s.device_id) == ["A", "B"]
    assert list(s.pm25_lcs) == [15.0, 90.0] and list(s.reference) == [30.0, 30.0]


def synthetic_set(n, rng, fn, noise=0.0):
    x = rng.uniform(5, 150, n)
    rh = rng.uniform(30, 95, n)
    t = rng.uniform(5, 35, n)
    y = fn(x, rh, t) + noise * rng.normal(size=n)
    return CoLocationSet(T0 + 300 * np.arange(n), np.array(["D"] * n, dtype=object), x, rh, t, y)


def test_noiseless_recovery():
    rng = np.random.default_rng(0)
    d = synthetic_set(200, rng, lambda x, rh, t: 0.8 * x + 5)
    assert calibrate.fit("linear", d).params == pytest.approx((0.8, 5.0), abs=1e-9)
    d = synthetic_set(200, rng, lambda x, rh, t: 0.8 * x + 0.1 * rh + 2)
    assert calibrate.fit("rh_linear", d).params == pytest.approx((0.8, 0.1, 2.0), abs=1e-9)
    d = synthetic_set(200, rng, lambda x, rh, t: 0.7 * x - 0.2 * rh + 0.5 * t + 3)
    assert calibrate.fit("rh_t_linear", d).params == pytest.approx((0.7, -0.2, 0.5, 3.0), abs=1e-9)


def test_boosted_constant_target():
    rng = np.random.default_rng(1)
    d = synthetic_set(50, rng, lambda x, rh, t: np.full_like(x, 33.0))
    m = calibrate.fit("boosted", d, boosted_params=dict(n_trees=10))
    assert np.allclose(m.apply_arrays([1.0, 400.0], [10.0, 90.0], [0.0, 40.0]), 33.0)
    assert len(m.regressor.trees) >= 1


def test_fit_errors():
    rng = np.random.default_rng(2)
    with pytest.raises(EmptyDataError):
        calibrate.fit("linear", synthetic_set(5, rng, lambda x, rh, t: x))
    d = synthetic_set(30, rng, lambda x, rh, t: x)
    d.rh[:] = 50.0  # constant column is collinear with the intercept
    with pytest.raises(SingularFitError):
        calibrate.fit("rh_linear", d)


def test_apply_examples():
    ident = calibrate.CalibrationModel("linear", learn.LinearModel("ols", ("pm25_lcs",), 0.0, np.array([1.0])))
    rec = MobileRecord("T", T0, GeoPoint(23.0, 113.0), 37.5, 60.0, 20.0)
    assert calibrate.apply(ident, rec) == 37.5
    m = calibrate.CalibrationModel("linear", learn.LinearModel("ols", ("pm25_lcs",), 5.0, np.array([0.8])))
    rec50 = MobileRecord("T", T0, GeoPoint(23.0, 113.0), 50.0, 60.0, 20.0)
    assert calibrate.apply(m, rec50) == pytest.approx(45.0)
    neg = calibrate.CalibrationModel("linear", learn.LinearModel("ols", ("pm25_lcs",), -100.0, np.array([1.0])))
    assert calibrate.apply(neg, rec) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_residuals_orthogonal(seed):
    rng = np.random.default_rng(seed)
    d = synthetic_set(80, rng, lambda x, rh, t: 0.5 * x + 0.05 * rh * rh - t, noise=3.0)
    m = calibrate.fit("rh_t_linear", d)
    res = d.reference - m.predict_raw(d.pm25_lcs, d.rh, d.temp)
    for col in (np.ones(len(d)), d.pm25_lcs, d.rh, d.temp):
        assert abs(res @ col) <= 1e-6 * np.linalg.norm(res) * np.linalg.norm(col) + 1e-9


def test_evaluate_layout_and_perfect_model():
    rng = np.random.default_rng(4)
    d = synthetic_set(100, rng, lambda x, rh, t: 0.8 * x + 5)
    train, test = calibrate.split(d, seed=3)
    assert len(train) == 80 and len(test) == 20
    assert not set(train.interval_start) & set(test.interval_start)
    models = calibrate.fit_all(train, boosted_params=None, kinds=("linear", "rh_linear", "rh_t_linear"))
    rep = calibrate.evaluate(models, test)
    assert list(rep.rows) == ["raw", "(a) linear", "(b) rh_linear", "(c) rh_t_linear"]
    assert rep.rows["(a) linear"].r == pytest.approx(1.0) and rep.rows["(a) linear"].mae < 1e-9
    # never worse than the raw series on an affine truth
    assert rep.rows["(a) linear"].mae <= rep.rows["raw"].mae
    # deterministic split
    a, b = calibrate.split(d, seed=3)
    assert np.array_equal(a.interval_start, train.interval_start)
    c, _ = calibrate.split(d, seed=3, mode="chronological")
    assert c.interval_start.max() < _.interval_start.min()


def test_model_text_round_trip():
    rng = np.random.default_rng(5)
    d = synthetic_set(60, rng, lambda x, rh, t: 0.5 * x + rh / 10, noise=1.0)
    for kind in ("linear", "boosted"):
        m = calibrate.fit(kind, d, boosted_params=dict(n_trees=15))
        back = calibrate.CalibrationModel.loads(m.dumps())
        assert back.kind == kind
        assert np.array_equal(back.apply_arrays(d.pm25_lcs, d.rh, d.temp), m.apply_arrays(d.pm25_lcs, d.rh, d.temp))
    assert "tree_id,node_id,feature,threshold,left,right,leaf_value" in calibrate.fit(
        "boosted", d, boosted_params=dict(n_trees=2)).dumps()


def test_cross_device_correlation():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=1000), rng.normal(size=1000)
    names, m = calibrate.cross_device_correlation({"A": a, "B": b, "A2": a})
    assert names == ["A", "B", "A2"]
    assert np.allclose(np.diag(m), 1.0) and np.array_equal(m, m.T)
    assert abs(m[0, 1]) < 0.1 and m[0, 2] == pytest.approx(1.0)
    with pytest.raises(UndefinedStatisticError):
        calibrate.cross_device_correlation({"A": a, "C": np.ones(1000)})
    assert calibrate.correlation_csv(names, m).splitlines()[0] == ",A,B,A2"
