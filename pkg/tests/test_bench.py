import math

import numpy as np
import pandas as pd
import pytest

from hnnpc.bench import (
    ARForecaster,
    ExternalForecaster,
    Forecaster,
    ForecastRecord,
    HnnForecaster,
    OosPlan,
    PCForecaster,
    RollingMeanForecaster,
    _audit,
    bench_ar4,
    bench_rolling_mean,
    fit_ar,
    fit_pc,
    rmse,
    run_oos,
)
from hnnpc.data import HemisphereSpec, TargetSpec, target_series
from hnnpc.errors import ConfigError, DataError, LeakageError
from hnnpc.estimation import TrainConfig
from hnnpc.synthetic import synthetic_panel
from conftest import tiny_arch


def _normal_equations(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


def _ar_process(T, coef, seed=0, sd=1.0):
    rng = np.random.default_rng(seed)
    p = len(coef) - 1
    y = np.zeros(T + 100)
    for t in range(p, T + 100):
        y[t] = coef[0] + sum(coef[k] * y[t - k] for k in range(1, p + 1)) + sd * rng.standard_normal()
    return y[100:]


AR_TRUE = [0.5, 0.4, 0.2, -0.1, 0.05]


def test_ar_matches_normal_equations():
    y = _ar_process(120, AR_TRUE)
    X = np.column_stack([np.ones(116)] + [y[4 - k : 120 - k] for k in range(1, 5)])
    np.testing.assert_allclose(fit_ar(y), _normal_equations(X, y[4:]), rtol=0, atol=1e-8)


def test_ar_recovers_true_coefficients():
    coef = fit_ar(_ar_process(5000, AR_TRUE, seed=1))
    np.testing.assert_allclose(coef, AR_TRUE, atol=0.06)


def test_ar_white_noise_forecasts_near_mean():
    y = 2.0 + np.random.default_rng(2).standard_normal(4000)
    assert bench_ar4(y) == pytest.approx(2.0, abs=0.1)
    assert np.all(np.abs(fit_ar(y)[1:]) < 0.06)


def test_ar_iterated_and_aggregated():
    y = _ar_process(200, AR_TRUE, seed=3)
    c = fit_ar(y)
    hist = list(y)
    path = []
    for _ in range(4):
        nxt = c[0] + c[1] * hist[-1] + c[2] * hist[-2] + c[3] * hist[-3] + c[4] * hist[-4]
        hist.append(nxt)
        path.append(nxt)
    assert bench_ar4(y, 4) == pytest.approx(path[-1], rel=1e-12)
    assert bench_ar4(y, 4, "mean") == pytest.approx(np.mean(path), rel=1e-12)
    assert bench_ar4(y, 4, "sum") == pytest.approx(np.sum(path), rel=1e-12)


def test_ar_errors():
    with pytest.raises(DataError):
        fit_ar(np.ones(20))
    with pytest.raises(DataError):
        fit_ar(np.r_[np.ones(50), np.nan])
    with pytest.raises(DataError, match="singular"):
        fit_ar(np.ones(60))


def test_rolling_mean():
    y = np.arange(1.0, 51.0)
    assert bench_rolling_mean(y, 4) == 48.5
    assert bench_rolling_mean(y, 40) == np.mean(y[-40:])
    with pytest.raises(DataError):
        bench_rolling_mean(y[:3], 4)


def _pc_data(T=150, seed=0):
    rng = np.random.default_rng(seed)
    gap = rng.standard_normal(T)
    oil = rng.standard_normal(T)
    pi = np.zeros(T)
    for t in range(1, T):
        pi[t] = 0.5 + 0.5 * pi[t - 1] + 0.3 * gap[t - 1] + 0.2 * oil[t - 1] + 0.3 * rng.standard_normal()
    return pi, gap, oil


def test_pc_matches_normal_equations():
    pi, gap, oil = _pc_data()
    fit = fit_pc(pi, gap, window=60)
    T = len(pi)
    rows = np.arange(T - 1 - 60, T - 1)  # targets pi_{t+1} observed up to T-1
    assert np.array_equal(fit.rows, rows)
    X = np.column_stack([np.ones(60), pi[rows], pi[rows - 1], gap[rows]])
    beta = _normal_equations(X, pi[rows + 1])
    np.testing.assert_allclose(fit.coef, beta, rtol=0, atol=1e-8)
    assert fit.forecast == pytest.approx(beta @ [1, pi[-1], pi[-2], gap[-1]], abs=1e-8)

    plus = fit_pc(pi, gap, {"oil": oil}, window=60)
    Xp = np.column_stack([X, oil[rows], oil[rows - 1]])
    np.testing.assert_allclose(plus.coef, _normal_equations(Xp, pi[rows + 1]), rtol=0, atol=1e-8)


def test_pc_full_window_equals_expanding():
    pi, gap, _ = _pc_data()
    full = fit_pc(pi, gap, window=None)
    same = fit_pc(pi, gap, window=len(full.rows))
    np.testing.assert_array_equal(full.coef, same.coef)
    with pytest.raises(DataError):
        fit_pc(pi, gap, window=len(full.rows) + 1)


def test_pc_multi_step_target():
    pi, gap, _ = _pc_data()
    fit = fit_pc(pi, gap, window=50, s=4, aggregation="mean")
    T = len(pi)
    rows = fit.rows
    assert rows[-1] == T - 5
    y = np.array([pi[t + 1 : t + 5].mean() for t in rows])
    X = np.column_stack([np.ones(50), pi[rows], pi[rows - 1], gap[rows]])
    np.testing.assert_allclose(fit.coef, _normal_equations(X, y), atol=1e-8)


def _recs(model, origins, f, r, h=1):
    return [ForecastRecord(pd.Period(o, "Q"), model, h, a, b) for o, a, b in zip(origins, f, r)]


def test_rmse_direct_formula():
    rng = np.random.default_rng(0)
    origins = pd.period_range("2000Q1", periods=30, freq="Q")
    f, r = rng.standard_normal(30), rng.standard_normal(30)
    res = rmse(_recs("m", origins, f, r), "m")
    assert abs(res.rmse - math.sqrt(sum((a - b) ** 2 for a, b in zip(f, r)) / 30)) < 1e-12
    assert math.isnan(res.ratio)
    assert rmse(_recs("m", origins[:2], [1.0, 2.0], [1.0, 2.0]), "m").rmse == 0.0
    assert rmse(_recs("m", origins[:2], [2.0, 2.0], [1.0, 1.0]), "m").rmse == 1.0


def test_rmse_monotone_in_error_scale():
    origins = pd.period_range("2000Q1", periods=10, freq="Q")
    e = np.random.default_rng(1).standard_normal(10)
    vals = [rmse(_recs("m", origins, c * e, np.zeros(10)), "m").rmse for c in (0.5, 1.0, 2.0)]
    assert vals[0] < vals[1] < vals[2]


def test_rmse_exclusions_and_ratio():
    origins = pd.period_range("2019Q2", periods=8, freq="Q")  # targets 2019Q3..2021Q2
    recs = _recs("m", origins, np.ones(8), np.zeros(8)) + _recs("AR4", origins, 2 * np.ones(8), np.zeros(8))
    recs[3].forecast = 100.0  # origin 2020Q1, target 2020Q2
    res = rmse(recs, "m", exclusions=(("2020Q1", "2020Q4"),))
    assert res.rmse == 1.0 and res.n == 4 and res.n_excluded == 4
    assert res.ratio == 0.5
    with pytest.raises(DataError):
        rmse(recs, "m", exclusions=(("2000Q1", "2030Q1"),))


def test_plan():
    p = OosPlan("2019Q4", "2020Q4")
    assert len(p.origins()) == 5
    assert p.is_excluded("2019Q4") and not p.is_excluded("2020Q4")
    assert OosPlan(horizon=4, first_origin="2019Q1", last_origin="2019Q1").exclusions[0][1] == pd.Period("2021Q2", "Q")
    with pytest.raises(ConfigError):
        OosPlan("2010Q1", "2009Q4")


@pytest.fixture(scope="module")
def panel():
    return synthetic_panel(T=200, seed=0)


TARGET = TargetSpec("CPIAUCSL", 1, tcode=5, scale=400.0)


class _Oracle(Forecaster):
    """Looks the answer up in a full copy of the data (to test scoring only)."""

    name = "oracle"

    def __init__(self, full):
        self.full = target_series(full, TARGET)
        self.seen = []

    def predict(self, panel, origin, target, plan):
        self.seen.append(panel.dates[-1])
        return float(self.full[origin + 1])


def test_run_oos_perfect_foresight_and_visibility(panel):
    plan = OosPlan("2000Q1", "2005Q4", start="1961Q1", exclusions=())
    oracle = _Oracle(panel)
    res = run_oos(plan, [oracle, ARForecaster()], panel, TARGET)
    assert oracle.seen == list(plan.origins())
    summ = res.summary().set_index(["model", "sample"])
    assert summ.loc[("oracle", "all"), "rmse"] < 1e-12
    assert summ.loc[("AR4", "all"), "ratio"] == 1.0
    assert summ.loc[("oracle", "all"), "n"] == 24


def test_run_oos_benchmarks_and_external(panel, tmp_path):
    plan = OosPlan("2004Q1", "2009Q3", start="1961Q1", exclusions=(("2006Q1", "2006Q4"),))
    ext = pd.DataFrame({"origin": [str(o) for o in plan.origins()], "value": 3.0})
    ext.to_csv(tmp_path / "spf.csv", index=False)
    models = [
        ARForecaster(),
        RollingMeanForecaster(4),
        RollingMeanForecaster(40),
        PCForecaster("GDPGAP", window=40),
        PCForecaster("GDPGAP", {"OILPRICEx": None}, window=40),
        ExternalForecaster.from_csv(tmp_path / "spf.csv"),
    ]
    res = run_oos(plan, models, panel, TARGET)
    s = res.summary()
    assert set(s["model"]) == {"AR4", "1y Avg", "10y Avg", "PC", "PC+", "spf"}
    ex = s[s["sample"] == "excluding"]
    assert (ex["n_excluded"] == 4).all()
    assert ex["rmse"].notna().all()
    res.to_csv(tmp_path / "out")
    fc = pd.read_csv(tmp_path / "out" / "oos_forecasts.csv")
    assert len(fc) == 6 * len(plan.origins())
    assert fc.loc[fc.model == "spf", "forecast"].eq(3.0).all()
    last = fc[fc.origin == "2009Q3"]
    assert last["realized"].notna().all()  # 2009Q4 is the last observation


def test_run_oos_plan_errors(panel):
    with pytest.raises(ConfigError):
        run_oos(OosPlan("2015Q1", "2016Q1"), [ARForecaster()], panel, TARGET)
    with pytest.raises(ConfigError):
        run_oos(OosPlan("2005Q1", "2006Q1", horizon=4), [ARForecaster()], panel, TARGET)


def test_audit_blocks_future_rows(panel):
    with pytest.raises(LeakageError):
        _audit(panel, pd.Period("2005Q1", "Q"))
    _audit(panel.until("2005Q1"), pd.Period("2005Q1", "Q"))


def test_hnn_forecaster_cadence_and_information_set(panel):
    specs = [
        HemisphereSpec("real", ("AWHMAN", "UNRATE")),
        HemisphereSpec("exp", ("Y", "spf_cpih1")),
        HemisphereSpec("lr", ("trend",), role="coefficient"),
    ]
    arch = tiny_arch("volatility", hemispheres=("real", "exp"))
    model = HnnForecaster(arch, specs, TrainConfig(n_members=2, epochs=3), cadence=4)
    plan = OosPlan("2006Q1", "2007Q2", start="1962Q1", exclusions=())
    res = run_oos(plan, [model], panel, TARGET)
    assert [f["origin"] for f in model.fits] == ["2006Q1", "2007Q1"]
    paths = res.paths()
    assert paths["volatility"].gt(0).all() and paths["forecast"].notna().all()
    # the 2006Q1 fit sees targets up to 2006Q1, so its last training row is 2005Q4
    model.fit_origin = pd.Period("2006Q1", "Q")
    fs = model._features(panel.until("2006Q1"), TARGET, plan)
    assert fs.dates[fs.train_rows[-1]] == pd.Period("2005Q4", "Q")
    assert model.fits[0]["n_train"] == len(fs.train_rows)
