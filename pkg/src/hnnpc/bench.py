"""Pseudo-out-of-sample forecasting harness and econometric benchmarks.

At each origin ``o`` a model sees the panel truncated at ``o`` and forecasts
the target dated ``o`` (``pi_{o+s}``, or the average over ``o+1..o+s``).
Benchmarks are re-fitted every quarter; networks every ``net_cadence``
origins, with feature scalers frozen at the re-estimation date.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import TargetSpec, _target_path, build_features, target_series, to_period
from .errors import ConfigError, DataError, LeakageError

log = logging.getLogger(__name__)

# Windows are matched against the date being forecast (origin + horizon).
DEFAULT_EXCLUSIONS = {
    1: (("2020Q1", "2020Q4"),),
    4: (("2020Q1", "2021Q2"),),
}


@dataclass
class OosPlan:
    first_origin: str = "2008Q1"
    last_origin: str = "2021Q3"
    start: str = "1961Q3"
    horizon: int = 1
    net_cadence: int = 4
    bench_cadence: int = 1
    exclusions: tuple | None = None  # ((start, end), ...); None picks the default for the horizon

    def __post_init__(self):
        if self.net_cadence < 1 or self.bench_cadence < 1:
            raise ConfigError("re-estimation cadence must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if to_period(self.first_origin) > to_period(self.last_origin):
            raise ConfigError(f"empty plan: first origin {self.first_origin} is after last origin {self.last_origin}")
        if self.exclusions is None:
            self.exclusions = DEFAULT_EXCLUSIONS.get(self.horizon, DEFAULT_EXCLUSIONS[1])
        self.exclusions = tuple((to_period(a), to_period(b)) for a, b in self.exclusions)

    def origins(self):
        return pd.period_range(to_period(self.first_origin), to_period(self.last_origin), freq="Q")

    def target_date(self, origin):
        return to_period(origin) + self.horizon

    def is_excluded(self, origin):
        d = self.target_date(origin)
        return any(a <= d <= b for a, b in self.exclusions)


@dataclass
class ForecastRecord:
    origin: pd.Period
    model: str
    horizon: int
    forecast: float
    realized: float = math.nan  # NaN until observed
    volatility: float = math.nan

    @property
    def observed(self):
        return np.isfinite(self.realized)


# scoring ----------------------------------------------------------------


@dataclass
class RmseResult:
    rmse: float
    ratio: float  # relative to the reference model on the same origins; NaN if unavailable
    n: int
    n_excluded: int


def _excluded(origin, horizon, windows):
    d = to_period(origin) + horizon
    return any(to_period(a) <= d <= to_period(b) for a, b in windows)


def _errors(records, model, windows):
    out, n_ex = {}, 0
    for r in records:
        if r.model != model or not r.observed:
            continue
        if _excluded(r.origin, r.horizon, windows):
            n_ex += 1
            continue
        out[r.origin] = r.forecast - r.realized
    return out, n_ex


def rmse(records, model, exclusions=(), reference="AR4"):
    """Root mean squared error of ``model`` over observed, non-excluded records.

    ``exclusions`` are ``(start, end)`` windows matched against target dates.
    The ratio divides by the reference model's RMSE over the origins both
    models forecast.
    """
    errs, n_ex = _errors(records, model, exclusions)
    if not errs:
        raise DataError(f"no scoreable forecasts for {model!r} after exclusions")
    e = np.array(list(errs.values()))
    value = float(np.sqrt(np.mean(e**2)))
    ratio = math.nan
    ref, _ = _errors(records, reference, exclusions)
    common = [o for o in errs if o in ref]
    if common:
        num = np.sqrt(np.mean([errs[o] ** 2 for o in common]))
        den = np.sqrt(np.mean([ref[o] ** 2 for o in common]))
        ratio = float(num / den) if den > 0 else math.nan
    return RmseResult(value, ratio, len(e), n_ex)


# benchmarks -------------------------------------------------------------


def _lstsq(X, y):
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise DataError("singular design matrix")
    return np.linalg.lstsq(X, y, rcond=None)[0]


def _aggregate(path, aggregation):
    if aggregation == "one-step":
        return float(path[-1])
    if aggregation == "mean":
        return float(np.mean(path))
    if aggregation == "sum":
        return float(np.sum(path))
    raise ValueError(f"unknown aggregation {aggregation!r}")


def fit_ar(history, p=4, min_obs=40):
    """Least-squares AR(p) with intercept; returns ``[c, phi_1, ..., phi_p]``."""
    y = np.asarray(history, dtype=float)
    if np.isnan(y).any():
        raise DataError("history contains missing values")
    if y.shape[0] < min_obs:
        raise DataError(f"AR({p}) needs at least {min_obs} observations, got {y.shape[0]}")
    T = y.shape[0]
    X = np.column_stack([np.ones(T - p)] + [y[p - k : T - k] for k in range(1, p + 1)])
    return _lstsq(X, y[p:])


def ar_forecast_path(history, coef, steps):
    y = list(np.asarray(history, dtype=float))
    p = len(coef) - 1
    out = []
    for _ in range(steps):
        nxt = coef[0] + sum(coef[k] * y[-k] for k in range(1, p + 1))
        y.append(nxt)
        out.append(nxt)
    return np.array(out)


def bench_ar4(history, s=1, aggregation="one-step", p=4, min_obs=40):
    """Iterated AR(4) forecast of ``pi_{T+s}`` (or of its average/sum over ``T+1..T+s``)."""
    coef = fit_ar(history, p, min_obs)
    return _aggregate(ar_forecast_path(history, coef, s), aggregation)


def bench_rolling_mean(history, window):
    y = np.asarray(history, dtype=float)
    if window < 1 or y.shape[0] < window:
        raise DataError(f"need at least {window} observations for a {window}-quarter mean")
    return float(np.mean(y[-window:]))


def _lagged(x, lags):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(lags):
        c = np.full_like(x, np.nan)
        c[k:] = x[: x.shape[0] - k]
        cols.append(c)
    return cols


def pc_design(pi, gap, extras=None, lags=2, gap_lags=1):
    """Regressors ``[1, pi_t..pi_{t-lags+1}, gap_t.., extra lags...]`` for every ``t``."""
    cols = [np.ones(len(pi))] + _lagged(pi, lags) + _lagged(gap, gap_lags)
    for x in (extras or {}).values():
        cols += _lagged(x, lags)
    return np.column_stack(cols)


@dataclass
class PCFit:
    coef: np.ndarray
    forecast: float
    rows: np.ndarray  # regression rows used


def fit_pc(pi, gap, extras=None, window=60, s=1, aggregation="one-step", lags=2, gap_lags=1):
    """Direct Phillips-curve regression on the last ``window`` usable quarters.

    Regresses the ``s``-step target on current and lagged inflation, the gap
    and (for the augmented version) lags of ``extras``; ``window=None``
    uses every available row.
    """
    pi = np.asarray(pi, dtype=float)
    gap = np.asarray(gap, dtype=float)
    if gap.shape != pi.shape or any(np.shape(v) != pi.shape for v in (extras or {}).values()):
        raise DataError("exogenous series must be aligned with inflation")
    X = pc_design(pi, gap, extras, lags, gap_lags)
    y = _target_path(pi, TargetSpec("pi", s, aggregation))
    usable = np.flatnonzero(np.isfinite(y) & np.isfinite(X).all(axis=1))
    if window is not None:
        if len(usable) < window:
            raise DataError(f"rolling window of {window} exceeds the {len(usable)} usable observations")
        usable = usable[-window:]
    coef = _lstsq(X[usable], y[usable])
    if not np.isfinite(X[-1]).all():
        raise DataError("regressors missing at the forecast origin")
    return PCFit(coef, float(X[-1] @ coef), usable)


def bench_pc(pi, gap, extras=None, window=60, s=1, aggregation="one-step", **kwargs):
    return fit_pc(pi, gap, extras, window, s, aggregation, **kwargs).forecast


# forecasters ------------------------------------------------------------


class Forecaster:
    """Interface: ``predict(panel, origin, target)`` with ``panel`` truncated at ``origin``.

    ``cadence`` is the number of origins between re-estimations
    (``fit`` is called at the first origin of every window).
    """

    name = "model"
    cadence = 1

    def fit(self, panel, origin, target, plan):
        pass

    def predict(self, panel, origin, target, plan):
        raise NotImplementedError


def _history(panel, target, start):
    pi = target_series(panel, target)
    pi = pi[pi.index >= to_period(start)] if start is not None else pi
    return pi.dropna()


class ARForecaster(Forecaster):
    def __init__(self, p=4, name="AR4"):
        self.p, self.name = p, name

    def predict(self, panel, origin, target, plan):
        h = _history(panel, target, plan.start)
        return bench_ar4(h.to_numpy(), target.horizon, target.aggregation, self.p)


class RollingMeanForecaster(Forecaster):
    def __init__(self, window, name=None):
        self.window = window
        self.name = name or {4: "1y Avg", 40: "10y Avg"}.get(window, f"{window}q Avg")

    def predict(self, panel, origin, target, plan):
        h = _history(panel, target, plan.start).to_numpy()
        m = bench_rolling_mean(h, self.window)
        return m if target.aggregation != "sum" else m * target.horizon


class PCForecaster(Forecaster):
    """Rolling Phillips-curve regression; ``extras`` (mnemonic -> tcode or None) makes it PC+."""

    def __init__(self, gap, extras=None, window=60, name=None):
        self.gap, self.extras, self.window = gap, dict(extras or {}), window
        self.name = name or ("PC+" if self.extras else "PC")

    def predict(self, panel, origin, target, plan):
        from .data import apply_tcode

        pi = _history(panel, target, plan.start)
        if self.gap not in panel.data.columns:
            raise DataError(f"gap series {self.gap!r} not in panel")

        def series(mn, tcode=None):
            raw = panel.data[mn].to_numpy(dtype=float)
            t = panel.tcodes.get(mn, 1) if tcode is None else tcode
            x = pd.Series(apply_tcode(raw, t, name=mn, keep_length=True), index=panel.dates)
            return x.reindex(pi.index).to_numpy()

        extras = {}
        for mn, tcode in self.extras.items():
            if mn not in panel.data.columns:
                raise DataError(f"series {mn!r} not in panel")
            extras[mn] = series(mn, tcode)
        gap = series(self.gap, 1)
        keep = np.isfinite(gap) & np.all([np.isfinite(v) for v in extras.values()] or [True], axis=0)
        first = np.argmax(keep)
        sl = slice(first, None)
        return bench_pc(
            pi.to_numpy()[sl], gap[sl], {k: v[sl] for k, v in extras.items()}, self.window,
            target.horizon, target.aggregation,
        )


class ExternalForecaster(Forecaster):
    """Forecasts supplied from a CSV with columns ``origin, value``."""

    def __init__(self, frame, name="external"):
        self.name = name
        self.values = {to_period(o): float(v) for o, v in zip(frame["origin"], frame["value"])}

    @classmethod
    def from_csv(cls, path, name=None):
        import os

        return cls(pd.read_csv(path), name or os.path.splitext(os.path.basename(str(path)))[0])

    def predict(self, panel, origin, target, plan):
        return self.values.get(to_period(origin), math.nan)


class HnnForecaster(Forecaster):
    """Hemisphere-network ensemble re-estimated every ``cadence`` origins.

    At a re-estimation origin ``o_k`` the training rows are those whose
    target is observed by ``o_k``; forecasts at later origins of the window
    reuse the ensemble and the scaling statistics computed at ``o_k``.
    """

    def __init__(self, arch, specs, train_config, cadence=4, name=None, feature_kwargs=None):
        self.arch, self.specs, self.config = arch, specs, train_config
        self.cadence = cadence
        self.name = name or ("HNN-F" if arch.factorized else "HNN")
        self.feature_kwargs = dict(feature_kwargs or {})
        self.ensemble = None
        self.fit_origin = None
        self.fits = []

    def _features(self, panel, target, plan):
        train_end = self.fit_origin - target.horizon
        return build_features(panel, self.specs, target, train_end, start=plan.start, **self.feature_kwargs)

    def fit(self, panel, origin, target, plan):
        from .estimation import fit_ensemble

        self.fit_origin = to_period(origin)
        fs = self._features(panel, target, plan)
        last_target = fs.dates[fs.train_rows[-1]] + target.horizon
        if last_target > self.fit_origin:
            raise LeakageError(f"training target dated {last_target} is after origin {self.fit_origin}")
        self.ensemble = fit_ensemble(self.arch, fs, self.config)
        self.fits.append({"origin": str(origin), "n_train": int(len(fs.train_rows)), "log": self.ensemble.log})

    def predict(self, panel, origin, target, plan):
        fs = self._features(panel, target, plan)
        row = fs.row_of(origin)
        inputs = fs.inputs([row])
        outs = [m.model.predict(inputs) for m in self.ensemble.members]
        point = float(np.mean([o.prediction[0] for o in outs]))
        vol = math.nan
        if self.arch.has_volatility:
            vol = float(np.mean([o.volatility[0] for o in outs]))
        return point, vol


# orchestration ----------------------------------------------------------


@dataclass
class OosResult:
    plan: OosPlan
    target: TargetSpec
    records: list
    models: list = field(default_factory=list)

    def paths(self):
        rows = [
            {
                "origin": str(r.origin),
                "target_date": str(r.origin + r.horizon),
                "model": r.model,
                "horizon": r.horizon,
                "forecast": r.forecast,
                "realized": r.realized,
                "volatility": r.volatility,
                "excluded": self.plan.is_excluded(r.origin),
            }
            for r in self.records
        ]
        return pd.DataFrame(rows)

    def summary(self, reference="AR4"):
        rows = []
        for model in self.models:
            for sample, windows in (("all", ()), ("excluding", self.plan.exclusions)):
                try:
                    res = rmse(self.records, model, windows, reference)
                except DataError:
                    res = RmseResult(math.nan, math.nan, 0, 0)
                rows.append(
                    {
                        "model": model,
                        "target": self.target.mnemonic,
                        "horizon": self.target.horizon,
                        "sample": sample,
                        "rmse": res.rmse,
                        "ratio": res.ratio,
                        "n": res.n,
                        "n_excluded": res.n_excluded,
                    }
                )
        return pd.DataFrame(rows)

    def to_csv(self, directory):
        import os

        os.makedirs(directory, exist_ok=True)
        self.summary().to_csv(os.path.join(directory, "oos_summary.csv"), index=False, float_format="%.17g")
        self.paths().to_csv(os.path.join(directory, "oos_forecasts.csv"), index=False, float_format="%.17g")


def _audit(panel, origin):
    if panel.dates[-1] > origin:
        raise LeakageError(f"panel passed at origin {origin} extends to {panel.dates[-1]}")


def run_oos(plan, models, panel, target):
    """Score ``models`` (list of :class:`Forecaster`) over the plan's origins.

    Every forecaster sees ``panel.until(origin)`` only; realized values come
    from the full panel.
    """
    origins = plan.origins()
    if len(origins) == 0:
        raise ConfigError("forecast plan has no origins")
    if origins[0] <= panel.dates[0] or origins[-1] > panel.dates[-1]:
        raise ConfigError(f"origins {origins[0]}..{origins[-1]} outside data {panel.dates[0]}..{panel.dates[-1]}")
    if target.horizon != plan.horizon:
        raise ConfigError(f"target horizon {target.horizon} differs from plan horizon {plan.horizon}")
    pi = target_series(panel, target)
    realized = pd.Series(_target_path(pi.to_numpy(), target), index=panel.dates)
    records = []
    for i, origin in enumerate(origins):
        sub = panel.until(origin)
        _audit(sub, origin)
        for m in models:
            cadence = m.cadence if m.cadence != 1 else plan.bench_cadence
            if i % cadence == 0:
                m.fit(sub, origin, target, plan)
            out = m.predict(sub, origin, target, plan)
            point, vol = out if isinstance(out, tuple) else (out, math.nan)
            records.append(
                ForecastRecord(origin, m.name, target.horizon, float(point), float(realized.get(origin, math.nan)), vol)
            )
        log.info("origin %s done", origin)
    return OosResult(plan, target, records, [m.name for m in models])
