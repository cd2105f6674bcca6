"""Synthetic data-generating processes with known latent components.

Used for recovery checks, for the bundled demo panel and by the test-suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import FeatureSet, RawPanel


@dataclass
class Simulation:
    features: FeatureSet
    truth: dict  # name -> true path


def _ar1(rng, T, n, rho=0.5):
    e = rng.standard_normal((T + 50, n))
    x = np.zeros_like(e)
    for t in range(1, T + 50):
        x[t] = rho * x[t - 1] + np.sqrt(1 - rho**2) * e[t]
    return x[50:]


def latent_state_dgp(T=400, n_vars=10, snr=1.0, rho=0.5, seed=0):
    """Two hemispheres of ``n_vars`` series; inflation-like target.

    ``y = gamma_t * g_t + theta * e_t + noise`` where ``g_t`` is a mixture of
    ``tanh`` of three gap-hemisphere variables, ``gamma_t`` a slow logistic
    function of time and ``e_t`` a linear index of two expectation-hemisphere
    variables.  Noise variance equals signal variance divided by ``snr``.
    """
    rng = np.random.default_rng(seed)
    Xg = _ar1(rng, T, n_vars, rho)
    Xe = _ar1(rng, T, n_vars, rho)
    g = np.tanh(1.5 * Xg[:, 0]) + 0.7 * np.tanh(2.0 * Xg[:, 1] - 0.5) - 0.5 * np.tanh(Xg[:, 2])
    tau = np.arange(T) / (T - 1)
    gamma = 0.3 + 1.2 / (1.0 + np.exp(-10.0 * (tau - 0.5)))
    e = 0.6 * Xe[:, 0] + 0.4 * Xe[:, 1]
    h_g = gamma * g
    h_e = 0.8 * e
    signal = h_g + h_e
    noise = rng.standard_normal(T) * np.sqrt(signal.var() / snr)
    y = signal + noise
    fs = FeatureSet.from_arrays({"gap": Xg, "expectations": Xe}, y)
    return Simulation(fs, {"g": g, "gamma": gamma, "h:gap": h_g, "h:expectations": h_e, "signal": signal})


def volatility_dgp(T=400, n_vars=5, sigma=(0.5, 2.0), stay=0.95, seed=0):
    """Heteroscedastic target with a persistent two-regime volatility.

    A Markov regime ``s_t`` sets ``sigma_t``; a noisy indicator of ``s_t`` is
    one of the observed inputs, so the volatility is learnable from data.
    """
    rng = np.random.default_rng(seed)
    s = np.zeros(T, dtype=int)
    for t in range(1, T):
        s[t] = s[t - 1] if rng.random() < stay else 1 - s[t - 1]
    sig = np.where(s == 1, sigma[1], sigma[0])
    Xg = _ar1(rng, T, n_vars)
    Xe = _ar1(rng, T, n_vars)
    Xg[:, -1] = s + 0.2 * rng.standard_normal(T)
    mean = 0.8 * np.tanh(Xg[:, 0]) + 0.5 * Xe[:, 0]
    y = mean + sig * rng.standard_normal(T)
    fs = FeatureSet.from_arrays({"gap": Xg, "expectations": Xe}, y)
    return Simulation(fs, {"sigma": sig, "mean": mean, "regime": s})


def planted_driver_dgp(T=200, n_vars=10, snr=2.0, seed=0):
    """One hemisphere of ``n_vars`` series whose component depends on the first only."""
    rng = np.random.default_rng(seed)
    X = _ar1(rng, T, n_vars)
    h = np.tanh(1.5 * X[:, 0]) + 0.3 * X[:, 0]
    y = h + rng.standard_normal(T) * np.sqrt(h.var() / snr)
    fs = FeatureSet.from_arrays({"gap": X}, y)
    return Simulation(fs, {"h:gap": h})


def synthetic_panel(T=200, seed=0, start="1960Q1"):
    """Small FRED-QD-like panel (levels + transformation codes) for demos.

    Columns: a CPI index driven by a latent activity factor and expectations,
    a few activity series (including ``AWHMAN``), survey expectations, an oil
    price and a federal funds rate.
    """
    rng = np.random.default_rng(seed)
    f = _ar1(rng, T, 1, 0.8)[:, 0]  # activity factor
    tau = np.arange(T) / T
    expec = 2.0 + 1.5 * np.exp(-((tau - 0.35) ** 2) / 0.02) + 0.3 * _ar1(rng, T, 1, 0.9)[:, 0]
    oil_g = 0.08 * rng.standard_normal(T)
    gamma = 0.2 + 0.8 / (1 + np.exp(-12 * (0.4 - tau)))
    infl = np.zeros(T)  # annualised %
    for t in range(1, T):
        infl[t] = 0.5 * expec[t - 1] + 0.3 * infl[t - 1] + gamma[t - 1] * 1.2 * f[t - 1] + 3.0 * oil_g[t - 1] + 0.6 * rng.standard_normal()
    cpi = 30.0 * np.exp(np.cumsum(infl / 400.0))
    cols = {
        "CPIAUCSL": (cpi, 6),
        "AWHMAN": (40 + 0.8 * f + 0.2 * rng.standard_normal(T), 1),
        "PAYEMS": (60000 * np.exp(np.cumsum(0.004 + 0.004 * f + 0.002 * rng.standard_normal(T))), 5),
        "UNRATE": (6 - 1.0 * f + 0.2 * rng.standard_normal(T), 2),
        "INDPRO": (40 * np.exp(np.cumsum(0.006 + 0.01 * f + 0.01 * rng.standard_normal(T))), 5),
        "HWIx": (2000 * np.exp(0.15 * f + 0.05 * rng.standard_normal(T)), 5),
        "inf_mich": (expec + 0.2 * rng.standard_normal(T), 1),
        "spf_cpih1": (expec + 0.15 * rng.standard_normal(T), 1),
        "OILPRICEx": (20 * np.exp(np.cumsum(oil_g)), 5),
        "PPIACO": (30 * np.exp(np.cumsum(infl / 400 + 0.01 * rng.standard_normal(T))), 6),
        "FEDFUNDS": (np.maximum(0.1, 1.0 + 1.2 * infl / 2 + 0.5 * f + 0.3 * rng.standard_normal(T)), 2),
        "GDPC1": (3000 * np.exp(np.cumsum(0.007 + 0.006 * f + 0.004 * rng.standard_normal(T))), 5),
    }
    dates = pd.period_range(start, periods=T, freq="Q")
    data = pd.DataFrame({k: v for k, (v, _) in cols.items()}, index=dates)
    cbo_gap = 1.5 * f + 0.3 * rng.standard_normal(T)
    data["GDPGAP"] = cbo_gap
    tcodes = {k: c for k, (_, c) in cols.items()}
    tcodes["GDPGAP"] = 1
    return RawPanel(data, tcodes)
