"""Panel ingestion and hemisphere feature construction.

Series are made stationary with FRED-QD transformation codes, expanded into
lags and moving averages ("MARX" columns), grouped by hemisphere and scaled so
that each hemisphere carries the same a-priori weight.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .model import HnnInputs

log = logging.getLogger(__name__)

TCODE_DEPTH = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}
DEFAULT_LAGS = (0, 1, 2, 3)
DEFAULT_MAS = (2, 4, 8)
TARGET_ALIAS = "Y"  # mnemonic standing for the (transformed) target series itself
ROLES = ("state", "coefficient", "volatility")


# transforms -------------------------------------------------------------


def apply_tcode(series, tcode, name="series", keep_length=False):
    """Apply a FRED-MD/QD stationarity transformation.

    ====  ==============================
    code  transformation
    ====  ==============================
    1     x
    2     Δx
    3     Δ²x
    4     log x
    5     Δ log x
    6     Δ² log x
    7     Δ(x_t / x_{t-1} - 1)
    ====  ==============================

    The first ``depth`` values are lost; with ``keep_length`` they are
    returned as NaN so the output stays aligned with the input.
    """
    x = np.asarray(series, dtype=float)
    tcode = int(tcode)
    if tcode not in TCODE_DEPTH:
        raise ValueError(f"{name}: unknown transformation code {tcode}")
    depth = TCODE_DEPTH[tcode]
    if x.shape[0] <= depth:
        raise ValueError(f"{name}: {x.shape[0]} observations, tcode {tcode} needs more than {depth}")
    if tcode in (4, 5, 6):
        finite = x[np.isfinite(x)]
        if np.any(finite <= 0):
            raise ValueError(f"{name}: non-positive values under a log transformation (tcode {tcode})")
        x = np.log(x)
    if tcode in (1, 4):
        out = x.copy()
    elif tcode in (2, 5):
        out = np.diff(x)
    elif tcode in (3, 6):
        out = np.diff(x, n=2)
    else:
        out = np.diff(x[1:] / x[:-1] - 1.0)
    if keep_length:
        out = np.concatenate([np.full(depth, np.nan), out])
    return out


def invert_tcode(transformed, tcode, head):
    """Undo :func:`apply_tcode` given the first ``depth`` original values."""
    z = np.asarray(transformed, dtype=float)
    head = np.asarray(head, dtype=float)
    tcode = int(tcode)
    depth = TCODE_DEPTH[tcode]
    if head.shape[0] != depth:
        raise ValueError(f"tcode {tcode} needs {depth} initial values")
    if tcode in (4, 5, 6):
        head = np.log(head)
    if tcode in (1, 4):
        x = z.copy()
    elif tcode in (2, 5):
        x = np.concatenate([head, head[0] + np.cumsum(z)])
    elif tcode in (3, 6):
        d = np.concatenate([[head[1] - head[0]], head[1] - head[0] + np.cumsum(z)])
        x = np.concatenate([head[:1], head[0] + np.cumsum(d)])
    else:
        r = head[1] / head[0] - 1.0 + np.cumsum(z)
        x = np.concatenate([head, head[1] * np.cumprod(1.0 + r)])
    if tcode in (4, 5, 6):
        x = np.exp(x)
    return x


def marx_expand(series, lags=DEFAULT_LAGS, mas=DEFAULT_MAS):
    """Lags and trailing moving averages of a series, aligned at t.

    Returns a ``(T, len(lags) + len(mas))`` array; entries without enough
    history are NaN.  ``ma_k(t) = mean(x_t, ..., x_{t-k+1})``.
    """
    x = np.asarray(series, dtype=float)
    longest = max(max(lags, default=0) + 1, max(mas, default=1))
    if x.shape[0] <= longest:
        raise ValueError(f"marx_expand needs more than {longest} observations, got {x.shape[0]}")
    T = x.shape[0]
    cols = []
    for lag in lags:
        c = np.full(T, np.nan)
        c[lag:] = x[: T - lag]
        cols.append(c)
    for k in mas:
        c = np.full(T, np.nan)
        c[k - 1 :] = np.lib.stride_tricks.sliding_window_view(x, k).mean(axis=1)
        cols.append(c)
    return np.column_stack(cols)


def marx_names(lags=DEFAULT_LAGS, mas=DEFAULT_MAS):
    return [f"lag{lag}" for lag in lags] + [f"ma{k}" for k in mas]


# panel ------------------------------------------------------------------


def _to_quarter(values):
    try:
        return pd.PeriodIndex(pd.to_datetime(values, format="mixed"), freq="Q")
    except (ValueError, TypeError):
        return pd.PeriodIndex([pd.Period(str(v), freq="Q") for v in values], freq="Q")


def to_period(value):
    if isinstance(value, pd.Period):
        return value.asfreq("Q")
    try:
        return pd.Period(value, freq="Q")
    except (ValueError, TypeError):
        return pd.Timestamp(value).to_period("Q")


@dataclass
class RawPanel:
    """Quarterly panel: one column per mnemonic plus its transformation code."""

    data: pd.DataFrame
    tcodes: dict

    def __post_init__(self):
        if not isinstance(self.data.index, pd.PeriodIndex):
            self.data = self.data.copy()
            self.data.index = _to_quarter(self.data.index)
        if not self.data.index.is_monotonic_increasing or self.data.index.has_duplicates:
            raise DataError("panel dates must be strictly increasing")
        self.tcodes = {str(k): int(v) for k, v in self.tcodes.items()}
        missing = [c for c in self.data.columns if c not in self.tcodes]
        if missing:
            raise DataError(f"no transformation code for {missing}")

    @property
    def dates(self):
        return self.data.index

    @classmethod
    def from_csv(cls, path):
        """Read a FRED-QD style CSV.

        The first row holds mnemonics and the first column dates.  Rows before
        the first date carry metadata: one labelled ``transform`` (or, if
        unlabelled, the first such row) gives the transformation codes; a
        ``factors`` row is ignored.
        """
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
        first = raw.columns[0]
        meta_rows = 0
        for label in raw[first]:
            try:
                to_period(label)
                break
            except (ValueError, TypeError):
                meta_rows += 1
        if meta_rows == 0:
            raise DataError(f"{path}: no transformation-code row before the first date")
        meta = raw.iloc[:meta_rows]
        labels = [str(v).strip().lower() for v in meta[first]]
        pick = next((i for i, v in enumerate(labels) if "transform" in v or "tcode" in v), 0)
        tcode_row = meta.iloc[pick]
        body = pd.read_csv(path, skiprows=range(1, meta_rows + 1), float_precision="round_trip")
        body = body[body[first].notna() & (body[first].astype(str).str.strip() != "")]
        dates = _to_quarter(body[first].astype(str).tolist())
        frame = body.drop(columns=first).apply(pd.to_numeric, errors="coerce")
        frame.index = dates
        tcodes = {}
        for col in frame.columns:
            try:
                tcodes[col] = int(float(tcode_row[col]))
            except (TypeError, ValueError):
                raise DataError(f"{path}: bad transformation code for {col!r}") from None
        return cls(frame, tcodes)

    def to_csv(self, path):
        head = pd.DataFrame([self.tcodes], index=["transform"])
        body = self.data.copy()
        body.index = [p.start_time.strftime("%m/%d/%Y").lstrip("0").replace("/0", "/") for p in body.index]
        out = pd.concat([head[body.columns], body])
        out.index.name = "sasdate"
        out.to_csv(path, float_format="%.17g")

    def series(self, mnemonic):
        if mnemonic not in self.data.columns:
            raise DataError(f"mnemonic {mnemonic!r} not in panel")
        return self.data[mnemonic]

    def until(self, date):
        """Panel truncated at ``date`` (inclusive)."""
        return RawPanel(self.data.loc[: to_period(date)], dict(self.tcodes))

    def missing_report(self):
        """Per series: first/last observed date and count of interior gaps."""
        rows = []
        for col in self.data.columns:
            s = self.data[col]
            ok = s.notna().to_numpy()
            if not ok.any():
                rows.append((col, None, None, 0))
                continue
            i0, i1 = np.argmax(ok), len(ok) - 1 - np.argmax(ok[::-1])
            rows.append((col, s.index[i0], s.index[i1], int((~ok[i0 : i1 + 1]).sum())))
        return pd.DataFrame(rows, columns=["mnemonic", "first", "last", "interior_missing"]).set_index("mnemonic")


# specs ------------------------------------------------------------------


@dataclass
class TargetSpec:
    """Supervisor definition.

    ``aggregation="one-step"`` predicts ``pi_{t+s}``; ``"mean"`` predicts
    ``(1/s) * sum_{k=1..s} pi_{t+k}`` and ``"sum"`` the undivided sum.
    ``scale`` multiplies the transformed series (400 gives annualised
    quarterly log-growth in percent).
    """

    mnemonic: str
    horizon: int = 1
    aggregation: str = "one-step"
    tcode: int | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("target horizon must be >= 1")
        if self.aggregation not in ("one-step", "mean", "sum"):
            raise ConfigError(f"unknown target aggregation {self.aggregation!r}")
        if self.aggregation != "one-step" and self.horizon < 2:
            raise ConfigError("horizon aggregation needs horizon > 1")


@dataclass
class HemisphereSpec:
    name: str
    mnemonics: tuple = ()
    include_trend: bool = False
    role: str = "state"
    tcode_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mnemonics = tuple(self.mnemonics)
        if self.role not in ROLES:
            raise ConfigError(f"hemisphere {self.name!r}: role must be one of {ROLES}")
        if self.role == "coefficient" and any(m != "trend" for m in self.mnemonics):
            raise ConfigError(f"hemisphere {self.name!r}: coefficient hemispheres take only the trend")
        if self.role == "state" and not self.mnemonics:
            raise ConfigError(f"hemisphere {self.name!r}: state hemispheres need mnemonics")


def validate_specs(specs, allow_overlap=False):
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate hemisphere names")
    if sum(s.role == "coefficient" for s in specs) > 1:
        raise ConfigError("at most one trend-only hemisphere")
    if sum(s.role == "volatility" for s in specs) > 1:
        raise ConfigError("at most one volatility hemisphere")
    if not any(s.role == "state" for s in specs):
        raise ConfigError("at least one state hemisphere is required")
    if not allow_overlap:
        seen = {}
        for s in specs:
            if s.role != "state":
                continue
            for m in s.mnemonics:
                if m in seen:
                    raise ConfigError(f"{m!r} appears in hemispheres {seen[m]!r} and {s.name!r}")
                seen[m] = s.name


# features ---------------------------------------------------------------


@dataclass
class HemisphereBlock:
    values: np.ndarray  # scaled (T, p)
    names: list  # (mnemonic, kind) per column
    mean: np.ndarray
    std: np.ndarray
    divisor: float

    def columns_of(self, mnemonic):
        cols = [i for i, (m, _) in enumerate(self.names) if m == mnemonic]
        if not cols:
            raise KeyError(mnemonic)
        return cols

    @property
    def mnemonics(self):
        return list(dict.fromkeys(m for m, _ in self.names))


@dataclass
class FeatureSet:
    """Aligned design: hemisphere blocks, trend, target and the training mask.

    Rows cover every date where all features are defined; ``y`` is NaN where
    the target is not yet observed (forecast rows).
    """

    dates: pd.PeriodIndex
    blocks: dict
    trend: np.ndarray
    y: np.ndarray
    train_mask: np.ndarray
    target: TargetSpec
    trend_name: str | None = None
    state_names: tuple = ()
    target_series: pd.Series | None = None

    @property
    def n_obs(self):
        return len(self.dates)

    @property
    def train_rows(self):
        return np.flatnonzero(self.train_mask)

    def inputs(self, rows=None):
        blocks = {k: b.values for k, b in self.blocks.items()}
        inp = HnnInputs(blocks, self.trend)
        return inp if rows is None else inp.take(rows)

    def row_of(self, date):
        return self.dates.get_loc(to_period(date))

    @classmethod
    def from_arrays(cls, blocks, y, train_mask=None, dates=None, scale=True, names=None):
        """Feature set from raw per-hemisphere matrices.

        Each column counts as its own variable (``names`` may group columns
        as ``{hemisphere: [(variable, kind), ...]}``).  With ``scale`` the
        columns are standardised on the training rows and divided by
        ``sqrt(p_j)``.
        """
        y = np.asarray(y, dtype=float)
        T = y.shape[0]
        if train_mask is None:
            train_mask = np.isfinite(y)
        train_mask = np.asarray(train_mask, dtype=bool)
        if dates is None:
            dates = pd.period_range("1960Q1", periods=T, freq="Q")
        tr = np.flatnonzero(train_mask)
        out = {}
        for name, X in blocks.items():
            X = np.asarray(X, dtype=float)
            if X.ndim == 1:
                X = X[:, None]
            cols = (names or {}).get(name) or [(f"{name}{i}", "lag0") for i in range(X.shape[1])]
            if scale:
                mu, sd = X[tr].mean(axis=0), X[tr].std(axis=0)
                sd = np.where(sd == 0, 1.0, sd)
                div = float(np.sqrt(X.shape[1]))
            else:
                mu, sd, div = np.zeros(X.shape[1]), np.ones(X.shape[1]), 1.0
            out[name] = HemisphereBlock((X - mu) / sd / div, list(cols), mu, sd, div)
        trend = (np.arange(T) - tr[0]) / max(tr[-1] - tr[0], 1)
        return cls(
            dates=dates,
            blocks=out,
            trend=trend,
            y=y,
            train_mask=train_mask,
            target=TargetSpec("y"),
            trend_name="lr",
            state_names=tuple(blocks),
        )


def _target_path(pi, target):
    s = target.horizon
    T = pi.shape[0]
    y = np.full(T, np.nan)
    if target.aggregation == "one-step":
        y[: T - s] = pi[s:]
    else:
        stacked = np.column_stack([np.concatenate([pi[k:], np.full(k, np.nan)]) for k in range(1, s + 1)])
        y = stacked.sum(axis=1)
        if target.aggregation == "mean":
            y = y / s
    return y


def target_series(panel, target):
    """Transformed (and scaled) target ``pi_t`` on the panel's dates."""
    raw = panel.series(target.mnemonic).to_numpy(dtype=float)
    tcode = target.tcode if target.tcode is not None else panel.tcodes[target.mnemonic]
    pi = target.scale * apply_tcode(raw, tcode, name=target.mnemonic, keep_length=True)
    return pd.Series(pi, index=panel.dates, name=target.mnemonic)


def build_features(
    panel,
    specs,
    target,
    train_end,
    start=None,
    lags=DEFAULT_LAGS,
    mas=DEFAULT_MAS,
    card="features",
    drop_short_before=None,
    allow_overlap=False,
):
    """Assemble scaled hemisphere blocks, trend and target.

    Parameters
    ----------
    panel : RawPanel
    specs : list of HemisphereSpec
    target : TargetSpec
    train_end : date-like
        Last date whose row may be used for estimation.  Standardisation
        statistics and trend scaling are computed on training rows only.
    start : date-like, optional
        First admissible row.
    lags, mas : tuple of int
        MARX lags and moving-average orders.
    card : {"features", "variables", "none"}
        What ``card(H_j)`` counts in the ``1/sqrt(card)`` scaling: the
        block's columns (default) or its distinct series.  ``"none"`` gives
        plain standardisation.
    drop_short_before : date-like, optional
        Series whose MARX columns are still undefined at this date are dropped
        (with a warning) instead of truncating the sample.
    """
    validate_specs(specs, allow_overlap)
    if card not in ("features", "variables", "none"):
        raise ConfigError("card must be 'features', 'variables' or 'none'")
    train_end = to_period(train_end)
    dates = panel.dates
    if not dates[0] <= train_end <= dates[-1]:
        raise DataError(f"train_end {train_end} outside panel range {dates[0]}..{dates[-1]}")
    if target.mnemonic not in panel.data.columns:
        raise DataError(f"target mnemonic {target.mnemonic!r} not in panel")

    pi = target_series(panel, target)
    y_all = _target_path(pi.to_numpy(), target)
    kinds = marx_names(lags, mas)

    raw_blocks = {}
    for spec in specs:
        if spec.role == "coefficient" or (spec.role == "volatility" and not spec.mnemonics):
            continue
        cols, names = [], []
        for mn in spec.mnemonics:
            if mn == TARGET_ALIAS:
                x = pi.to_numpy()
            else:
                if mn not in panel.data.columns:
                    raise DataError(f"mnemonic {mn!r} (hemisphere {spec.name!r}) not in panel")
                tcode = spec.tcode_overrides.get(mn, panel.tcodes[mn])
                x = apply_tcode(panel.data[mn].to_numpy(dtype=float), tcode, name=mn, keep_length=True)
            m = marx_expand(x, lags, mas)
            if drop_short_before is not None:
                r = dates.get_loc(to_period(drop_short_before))
                if np.isnan(m[r]).any():
                    log.warning("dropping %s from %s: not available by %s", mn, spec.name, drop_short_before)
                    continue
            cols.append(m)
            names.extend((mn, k) for k in kinds)
        if not cols:
            raise DataError(f"hemisphere {spec.name!r} is empty after dropping short series")
        raw_blocks[spec.name] = (np.hstack(cols), names)

    defined = np.ones(len(dates), dtype=bool)
    for X, _ in raw_blocks.values():
        defined &= ~np.isnan(X).any(axis=1)
    if start is not None:
        defined &= np.asarray(dates >= to_period(start))
    if not defined.any():
        raise DataError("no date has every feature defined")
    first = np.argmax(defined)
    last = len(defined) - 1 - np.argmax(defined[::-1])
    if not defined[first : last + 1].all():
        gaps = [str(d) for d in dates[first : last + 1][~defined[first : last + 1]]]
        raise DataError(f"interior missing values at {gaps[:5]}{'...' if len(gaps) > 5 else ''}")
    rows = np.arange(first, last + 1)
    sub_dates = dates[rows]
    y = y_all[rows]
    train_mask = np.asarray(sub_dates <= train_end) & np.isfinite(y)
    if train_mask.sum() < 2:
        raise DataError("fewer than two training rows")
    tr = np.flatnonzero(train_mask)

    blocks = {}
    for name, (X, names) in raw_blocks.items():
        X = X[rows]
        mu = X[tr].mean(axis=0)
        sd = X[tr].std(axis=0)
        constant = sd == 0
        if constant.any():
            log.warning("%s: %d constant feature(s) in the training range", name, int(constant.sum()))
            sd = np.where(constant, 1.0, sd)
        n = {"features": X.shape[1], "none": 1}.get(card) or len(dict.fromkeys(m for m, _ in names))
        divisor = float(np.sqrt(n))
        blocks[name] = HemisphereBlock((X - mu) / sd / divisor, names, mu, sd, divisor)

    k0, k1 = tr[0], tr[-1]
    trend = (np.arange(len(rows)) - k0) / max(k1 - k0, 1)

    trend_name = next((s.name for s in specs if s.role == "coefficient"), None)
    state_names = tuple(s.name for s in specs if s.role == "state")
    return FeatureSet(
        dates=sub_dates,
        blocks=blocks,
        trend=trend,
        y=y,
        train_mask=train_mask,
        target=target,
        trend_name=trend_name,
        state_names=state_names,
        target_series=pi,
    )
