"""Acceptance criteria, each at its stated tolerance.

Every test reports one PASS/FAIL line (shown in the terminal summary).
Criterion 8 needs a user-supplied FRED-QD file: set ``HNNPC_FREDQD`` to its
path (``HNNPC_ACC8_MEMBERS`` optionally lowers the ensemble size).
"""
import os
import time

import numpy as np
import pandas as pd
import pytest

from conftest import ACCEPTANCE, fd_check, randomize_biases, record, tiny_arch, toy_inputs
from hnnpc.analysis import importance_report, variable_importance
from hnnpc.bench import ARForecaster, ForecastRecord, OosPlan, PCForecaster, fit_ar, fit_pc, rmse, run_oos
from hnnpc.cli import main
from hnnpc.data import FeatureSet, TargetSpec, target_series
from hnnpc.estimation import TrainConfig, fit_ensemble, identify_factorization, member_allocation, oob_components
from hnnpc.model import HnnArchitecture, HnnModel
from hnnpc.synthetic import latent_state_dgp, planted_driver_dgp, synthetic_panel, volatility_dgp


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    inp = toy_inputs(T=25, widths=(7, 6, 7))
    y = np.random.default_rng(0).standard_normal(25)
    worst = {}
    for variant, loss in (("additive", "mse"), ("factorized", "mse"), ("volatility", "mean_variance")):
        kw = {"include_trend": ("a", "b", "c")} if variant == "additive" else {}
        m = HnnModel(tiny_arch(variant, dropout=0.2, **kw), inp.dims(), rng=1)
        randomize_biases(m)

        def f():
            v, g, _ = m.loss_and_grad(inp, y, loss=loss, rng=np.random.default_rng(5))
            return v, g

        worst[variant] = fd_check(m, f)
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    record(1, max(worst.values()) < 1e-4 and elapsed < 30, f"max rel. error {detail}")


def test_2_latent_state_recovery():
    t0 = time.perf_counter()
    sim = latent_state_dgp(T=400, n_vars=10, snr=1.0, seed=0)
    arch = HnnArchitecture("factorized", ("gap", "expectations"), state_layers=3, state_neurons=100,
                           coef_layers=3, coef_neurons=100)
    ens = fit_ensemble(arch, sim.features, TrainConfig(n_members=50, seed=0))
    paths = oob_components(ens, sim.features)
    h = paths.mean("h:gap")
    ok = np.isfinite(h)
    corr_h = np.corrcoef(h[ok], sim.truth["h:gap"][ok])[0, 1]
    g = identify_factorization(paths, 1.0).mean("state:gap")
    ok = np.isfinite(g)
    corr_g = np.corrcoef(g[ok], sim.truth["g"][ok])[0, 1]
    elapsed = time.perf_counter() - t0
    record(2, corr_h > 0.8 and corr_g > 0.7 and elapsed < 600,
           f"corr(h_g) {corr_h:.3f} > 0.8, corr(g) {corr_g:.3f} > 0.7, {elapsed:.0f}s < 600s")


def test_3_volatility_recovery():
    sim = volatility_dgp(T=400, seed=0)
    kw = dict(state_layers=2, state_neurons=32, coef_layers=2, coef_neurons=16, vol_layers=2, vol_neurons=32)
    vol = HnnArchitecture("volatility", ("gap", "expectations"), **kw)
    ens = fit_ensemble(vol, sim.features, TrainConfig(n_members=20, epochs=500, seed=0))
    v = oob_components(ens, sim.features).mean("vol")
    ok = np.isfinite(v)
    corr = np.corrcoef(v[ok], sim.truth["sigma"][ok])[0, 1]

    mask = np.arange(400) < 300
    fs = FeatureSet.from_arrays({k: b.values for k, b in sim.features.blocks.items()}, sim.features.y, train_mask=mask)
    frozen = fit_ensemble(vol, fs, TrainConfig(n_members=20, epochs=500, seed=0, loss="mean_variance",
                                               freeze_volatility=True))
    plain = fit_ensemble(HnnArchitecture("factorized", ("gap", "expectations"), **kw), fs,
                         TrainConfig(n_members=20, epochs=500, seed=0))
    mse = {k: np.mean((fs.y[~mask] - e.predict(fs.inputs())[~mask]) ** 2) for k, e in (("frozen", frozen), ("mse", plain))}
    rel = abs(mse["frozen"] / mse["mse"] - 1)
    record(3, corr > 0.7 and rel < 0.05,
           f"corr(h_v, sigma) {corr:.3f} > 0.7; frozen-h_v vs MSE hold-out MSE differ by {100 * rel:.2f}% < 5%")


def test_4_vi_sanity():
    first, inert = 0, []
    arch = HnnArchitecture("factorized", ("gap",), state_layers=2, state_neurons=32, coef_layers=2, coef_neurons=16)
    for seed in range(100):
        sim = planted_driver_dgp(seed=seed)
        fs = sim.features
        ens = fit_ensemble(arch, fs, TrainConfig(n_members=3, epochs=200, seed=seed))
        rep = importance_report(ens, fs, "gap", reps=10, rng=seed)
        first += rep.ranking[0] == "gap0"
        # a noise input with zero pathwise influence: its first-layer weights are zeroed
        cols = fs.blocks["gap"].columns_of("gap9")
        for m in ens.members:
            m.model.nets["state:gap"].params[0][cols, :] = 0.0
        inert.append(abs(variable_importance(ens, fs, "gap", "gap9", reps=200, rng=seed)))
    record(4, first >= 95 and max(inert) < 1,
           f"driver ranked first in {first}/100 seeds (>= 95); max |VI| of inert input {max(inert):.2g} < 1")


def test_5_benchmark_oracles():
    panel = synthetic_panel(200, 0)
    target = TargetSpec("CPIAUCSL", 1, tcode=5, scale=400.0)
    pi = target_series(panel, target).dropna().to_numpy()
    coef = fit_ar(pi)
    T = len(pi)
    X = np.column_stack([np.ones(T - 4)] + [pi[4 - k : T - k] for k in range(1, 5)])
    ne = np.linalg.solve(X.T @ X, X.T @ pi[4:])
    err_ar = np.max(np.abs(coef - ne))

    gap = panel.data["GDPGAP"].to_numpy()[-T:]
    oil = np.diff(np.log(panel.data["OILPRICEx"].to_numpy()))[-T:]
    errs = []
    for extras in (None, {"oil": oil}):
        fit = fit_pc(pi, gap, extras, window=60)
        r = fit.rows
        cols = [np.ones(60), pi[r], pi[r - 1], gap[r]] + ([oil[r], oil[r - 1]] if extras else [])
        Z = np.column_stack(cols)
        errs.append(np.max(np.abs(fit.coef - np.linalg.solve(Z.T @ Z, Z.T @ pi[r + 1]))))
    err_pc = max(errs)

    plan = OosPlan("2000Q1", "2009Q3", start="1960Q3", exclusions=())
    res = run_oos(plan, [ARForecaster(), PCForecaster("GDPGAP", window=60)], panel, target)
    fc = res.paths()
    err_rmse = 0.0
    for model in ("AR4", "PC"):
        d = fc[fc.model == model]
        direct = np.sqrt(np.mean((d.forecast - d.realized) ** 2))
        err_rmse = max(err_rmse, abs(rmse(res.records, model).rmse - direct))
    record(5, err_ar < 1e-8 and err_pc < 1e-8 and err_rmse < 1e-12,
           f"AR(4) {err_ar:.1e}, PC/PC+ {err_pc:.1e} (< 1e-8); RMSE {err_rmse:.1e} (< 1e-12)")


def test_6_identification_invariance():
    sim = latent_state_dgp(T=200, seed=1)
    arch = HnnArchitecture("factorized", ("gap", "expectations"), state_layers=2, state_neurons=16,
                           coef_layers=2, coef_neurons=8)
    ens = fit_ensemble(arch, sim.features, TrainConfig(n_members=12, epochs=50, seed=1))
    paths = oob_components(ens, sim.features)
    target = 1.7
    ident = identify_factorization(paths, target)
    same = all(np.array_equal(ident.draws[k], paths.draws[k], equal_nan=True)
               for k in paths.names if k == "yhat" or k.startswith("h:"))
    sd = [abs(np.nanstd(ident.mean(f"state:{h}")[paths.in_sample]) - target) for h in ("gap", "expectations")]
    record(6, same and max(sd) < 1e-10,
           f"prediction and contributions bit-identical: {same}; |std(g) - target| {max(sd):.1e} < 1e-10")


def test_7_oob_coverage():
    # estimation rows of the benchmark setting: targets 1961Q4..2019Q4
    T = len(pd.period_range("1961Q3", "2019Q3", freq="Q"))
    cfg = TrainConfig(n_members=300, train_frac=0.85, block_len=6, seed=0)
    counts = np.zeros(T, dtype=int)
    for b in range(cfg.n_members):
        alloc, _ = member_allocation(cfg, b, 0, T)
        counts[alloc.holdout] += 1
    record(7, counts.min() >= 20,
           f"T={T}: min OOB draws {counts.min()} >= 20 (mean {counts.mean():.1f}, expected {0.15 * 300:.0f})")


def test_8_real_data_forecast(tmp_path):
    path = os.environ.get("HNNPC_FREDQD")
    if not path:
        ACCEPTANCE.append((8, "SKIP", "set HNNPC_FREDQD to a FRED-QD CSV to run (optional, non-blocking)"))
        pytest.skip("HNNPC_FREDQD not set")
    extra = []
    if os.environ.get("HNNPC_ACC8_MEMBERS"):
        extra = ["--set", f"training.n_members={int(os.environ['HNNPC_ACC8_MEMBERS'])}"]
    code = main(["forecast", "--config", "benchmark", "--data", path, "--out", str(tmp_path),
                 "--set", 'forecast.models=["AR4", "network"]', *extra])
    assert code == 0
    s = pd.read_csv(tmp_path / "oos_summary.csv")
    ratio = float(s[(s.model == "HNN-F") & (s["sample"] == "excluding")]["ratio"].iloc[0])
    record(8, 0.6 <= ratio <= 1.0, f"HNN-F/AR(4) RMSE ratio excluding 2020: {ratio:.3f} in [0.6, 1.0]")


def test_9_determinism(tmp_path):
    args = ["--config", "demo", "--set", "training.n_members=5", "--set", "training.epochs=50"]
    assert main(["estimate", *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["estimate", *args, "--out", str(tmp_path / "b")]) == 0
    names = ("components.csv", "contributions.csv", "shares.csv")
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    record(9, same, f"{', '.join(names)} byte-identical across two runs: {same}")
