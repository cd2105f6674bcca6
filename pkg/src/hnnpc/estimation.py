"""Ensemble estimation, out-of-bag component paths and credible bands.

Each ensemble member is trained on a random allocation of contiguous blocks
(85% in-bag, 15% hold-out) and early-stopped on the hold-out loss.  Component
paths are averaged, per date, over the members for which that date was
out-of-bag; the per-member values double as bootstrap draws for credible
regions.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DataError, DivergenceError
from .model import HnnModel, loss_mean_variance
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 0.005
    train_frac: float = 0.85
    block_len: int = 6
    dropout: float = 0.2
    n_members: int = 50
    seed: int = 0
    loss: str | None = None  # None: "mean_variance" for the volatility variant, else "mse"
    stop_metric: str | None = None  # None: "loss" for the volatility variant, else "mse"
    freeze_volatility: bool = False
    max_attempts: int = 3  # per member, so at most 3B fits in total
    oob_denominator: str = "count"  # or "paper": divide by (1 - train_frac) * B
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.train_frac < 1.0:
            raise ValueError("train_frac must lie in (0, 1)")
        if self.block_len < 1:
            raise ValueError("block_len must be >= 1")
        if self.epochs < 0 or self.n_members < 1:
            raise ValueError("epochs must be >= 0 and n_members >= 1")
        if self.oob_denominator not in ("count", "paper"):
            raise ValueError("oob_denominator must be 'count' or 'paper'")


@dataclass
class Allocation:
    train: np.ndarray
    holdout: np.ndarray


def block_allocate(T, block_len, train_frac, rng):
    """Split ``range(T)`` into contiguous blocks and hold out a random subset.

    The number of hold-out blocks is ``(1 - train_frac) * n_blocks`` rounded
    stochastically, so every date is held out with probability exactly
    ``1 - train_frac`` while each draw stays within one block of the target
    share.  At least one block lands in each set.
    """
    T, block_len = int(T), int(block_len)
    if block_len < 1 or T <= 2 * block_len:
        raise ValueError(f"need T > 2 * block_len, got T={T}, block_len={block_len}")
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    starts = np.arange(0, T, block_len)
    n_blocks = len(starts)
    expected = (1.0 - train_frac) * n_blocks
    n_hold = int(np.floor(expected))
    if rng.random() < expected - n_hold:
        n_hold += 1
    n_hold = min(max(n_hold, 1), n_blocks - 1)
    held = np.zeros(n_blocks, dtype=bool)
    held[rng.choice(n_blocks, size=n_hold, replace=False)] = True
    block_of = np.arange(T) // block_len
    mask = held[block_of]
    return Allocation(np.flatnonzero(~mask), np.flatnonzero(mask))


@dataclass
class TrainResult:
    model: HnnModel
    best_epoch: int
    holdout_path: np.ndarray  # stopping metric per epoch, epoch 0 first
    train_path: np.ndarray
    seed: object = None


def _resolve(config, arch):
    loss = config.loss or ("mean_variance" if arch.has_volatility else "mse")
    stop = config.stop_metric or ("loss" if arch.has_volatility else "mse")
    return loss, stop


def train_one(arch, inputs, y, allocation, config, seed=None):
    """Full-batch Adam on the in-bag rows, early-stopped on the hold-out rows.

    Returns the parameters of the epoch with the lowest hold-out metric
    (epoch 0 is the initialisation, so ``epochs=0`` returns it unchanged).
    """
    y = np.asarray(y, dtype=float)
    arch = replace(arch, dropout=config.dropout)
    loss, stop = _resolve(config, arch)
    rng = np.random.default_rng(seed)
    model = HnnModel(arch, inputs.dims(), rng=rng)
    tr, ho = allocation.train, allocation.holdout
    train_in, y_tr = inputs.take(tr), y[tr]
    eval_in = inputs.take(np.concatenate([tr, ho]))
    n_tr = len(tr)
    y_ho = y[ho]

    def evaluate():
        if arch.has_volatility:
            out, cache = model.forward(eval_in)
            norm = float(cache["slow_raw"][:n_tr].mean())
            vol = cache["slow_raw"] / norm * out.vol_fast
            pred = out.prediction[n_tr:]
            if stop == "loss" and not config.freeze_volatility:
                return loss_mean_variance(y_ho, pred, vol[n_tr:]), norm
        else:
            pred = model.forward(inputs.take(ho))[0].prediction
            norm = None
        return float(np.mean((y_ho - pred) ** 2)), norm

    state = AdamState(lr=config.lr)
    params = model.parameters()
    best, best_norm = evaluate()
    best_epoch, best_params = 0, [p.copy() for p in params]
    holdout_path = [best]
    train_path = []
    for epoch in range(1, config.epochs + 1):
        value, grads, _ = model.loss_and_grad(
            train_in, y_tr, loss=loss, train=True, rng=rng, freeze_volatility=config.freeze_volatility
        )
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite training loss at epoch {epoch} (seed {seed})", seed)
        adam_step(params, grads, state)
        metric, norm = evaluate()
        if not np.isfinite(metric):
            raise DivergenceError(f"non-finite hold-out loss at epoch {epoch} (seed {seed})", seed)
        train_path.append(value)
        holdout_path.append(metric)
        if metric < best:
            best, best_norm, best_epoch = metric, norm, epoch
            best_params = [p.copy() for p in params]
    model.set_parameters(best_params)
    model.vol_norm = best_norm
    return TrainResult(model, best_epoch, np.array(holdout_path), np.array(train_path), seed)


# ensembles --------------------------------------------------------------


@dataclass
class Member:
    model: HnnModel
    allocation: Allocation  # positions within the ensemble's training rows
    best_epoch: int
    holdout_path: np.ndarray
    draw: int
    attempt: int


@dataclass
class EnsembleResult:
    members: list
    train_rows: np.ndarray  # row indices (into the feature set) used for estimation
    config: TrainConfig
    arch: object
    log: list = field(default_factory=list)

    @property
    def size(self):
        return len(self.members)

    def member_outputs(self, inputs):
        """``{path name: (B, T) array}`` of every member's full-sample outputs."""
        flats = [m.model.predict(inputs).flat() for m in self.members]
        return {k: np.vstack([f[k] for f in flats]) for k in flats[0]}

    def predict(self, inputs):
        """Ensemble forecast: the mean of member predictions."""
        return np.mean([m.model.predict(inputs).prediction for m in self.members], axis=0)

    def inbag_mask(self, n_obs):
        """``(B, n_obs)`` boolean, True where a row was in a member's training set."""
        mask = np.zeros((self.size, n_obs), dtype=bool)
        for b, m in enumerate(self.members):
            mask[b, self.train_rows[m.allocation.train]] = True
        return mask


def member_seed(root, draw, attempt):
    return np.random.SeedSequence([int(root), int(draw), int(attempt)])


def member_allocation(config, draw, attempt, T):
    """Block allocation and training seed of one member attempt."""
    alloc_seed, train_seed = member_seed(config.seed, draw, attempt).spawn(2)
    allocation = block_allocate(T, config.block_len, config.train_frac, np.random.default_rng(alloc_seed))
    return allocation, train_seed


def _fit_member(arch, inputs, y, config, draw):
    last = None
    for attempt in range(config.max_attempts):
        allocation, train_seed = member_allocation(config, draw, attempt, len(y))
        t0 = time.perf_counter()
        try:
            res = train_one(arch, inputs, y, allocation, config, seed=train_seed)
        except DivergenceError as exc:
            log.warning("draw %d attempt %d diverged: %s", draw, attempt, exc)
            last = {"draw": draw, "attempt": attempt, "status": "diverged", "error": str(exc)}
            continue
        entry = {
            "draw": draw,
            "attempt": attempt,
            "status": "ok",
            "best_epoch": res.best_epoch,
            "holdout_epoch0": float(res.holdout_path[0]),
            "holdout_best": float(res.holdout_path[res.best_epoch]),
            "seconds": time.perf_counter() - t0,
        }
        return Member(res.model, allocation, res.best_epoch, res.holdout_path, draw, attempt), entry
    return None, last


def fit_ensemble(arch, features, config, rows=None):
    """Train ``config.n_members`` members on the training rows of ``features``.

    ``features`` is a :class:`~hnnpc.data.FeatureSet` (its ``train_mask``
    selects rows unless ``rows`` is given).  Member ``b`` derives all of its
    randomness from ``(config.seed, b, attempt)``, so results do not depend on
    execution order or ``n_jobs``.
    """
    rows = features.train_rows if rows is None else np.asarray(rows)
    inputs = features.inputs(rows)
    y = features.y[rows]
    if not np.all(np.isfinite(y)):
        raise DataError("training target contains missing values")
    draws = range(config.n_members)
    if config.n_jobs == 1:
        results = [_fit_member(arch, inputs, y, config, b) for b in draws]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_fit_member)(arch, inputs, y, config, b) for b in draws
        )
    members = [m for m, _ in results if m is not None]
    entries = [e for _, e in results]
    if not members:
        raise DivergenceError("every ensemble member diverged")
    dropped = sum(m is None for m, _ in results)
    if dropped:
        log.warning("%d of %d draws dropped after %d attempts", dropped, config.n_members, config.max_attempts)
    return EnsembleResult(members, rows, config, replace(arch, dropout=config.dropout), entries)


# component paths --------------------------------------------------------


def credible_band(draws, level=0.68, min_draws=10, on_insufficient="raise"):
    """Per-column empirical quantiles at ``(1 - level)/2`` and ``1 - (1 - level)/2``.

    ``draws`` is ``(n_draws, T)``; NaN entries are ignored.  Columns with
    fewer than ``min_draws`` values raise, or give NaN with
    ``on_insufficient="nan"``.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    counts = np.isfinite(draws).sum(axis=0)
    short = counts < min_draws
    if short.any() and on_insufficient == "raise":
        raise DataError(f"{int(short.sum())} column(s) have fewer than {min_draws} draws")
    alpha = (1.0 - level) / 2.0
    lower = np.full(draws.shape[1], np.nan)
    upper = np.full(draws.shape[1], np.nan)
    ok = ~short
    if ok.any():
        lower[ok] = np.nanquantile(draws[:, ok], alpha, axis=0)
        upper[ok] = np.nanquantile(draws[:, ok], 1.0 - alpha, axis=0)
    return lower, upper


@dataclass
class ComponentPaths:
    """Per-member paths with their out-of-bag masks.

    ``draws[name]`` is ``(B, T)`` full-sample output of every member;
    ``oob[b, t]`` is True when row ``t`` was not in member ``b``'s training
    set.  ``in_sample`` flags the estimation rows (others are forecasts).
    """

    dates: object
    draws: dict
    oob: np.ndarray
    in_sample: np.ndarray
    train_frac: float = 0.85
    denominator: str = "count"

    @property
    def names(self):
        return list(self.draws)

    @property
    def n_draws(self):
        return self.oob.shape[0]

    def counts(self):
        return self.oob.sum(axis=0)

    def gaps(self):
        """Rows with no out-of-bag draw."""
        return np.flatnonzero(self.counts() == 0)

    def oob_draws(self, name):
        return np.where(self.oob, self.draws[name], np.nan)

    def mean(self, name):
        """Out-of-bag average per row; NaN where no member is out-of-bag."""
        d = np.where(self.oob, self.draws[name], 0.0)
        counts = self.counts()
        total = d.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            if self.denominator == "paper":
                out = np.where(self.in_sample, total / ((1.0 - self.train_frac) * self.n_draws), total / counts)
            else:
                out = total / counts
        return np.where(counts > 0, out, np.nan)

    def band(self, name, level=0.68, min_draws=10, on_insufficient="raise"):
        return credible_band(self.oob_draws(name), level, min_draws, on_insufficient)

    def to_frame(self, level=0.68, names=None, min_draws=10):
        """Tidy table: date, series, mean, lower, upper, n_draws."""
        frames = []
        counts = self.counts()
        for name in names or self.names:
            lo, hi = self.band(name, level, min_draws, on_insufficient="nan")
            frames.append(
                pd.DataFrame(
                    {
                        "date": [str(d) for d in self.dates],
                        "hemisphere": name,
                        "mean": self.mean(name),
                        "lower": lo,
                        "upper": hi,
                        "n_draws": counts,
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path, level=0.68, names=None):
        self.to_frame(level, names).to_csv(path, index=False, float_format="%.17g")


def oob_components(ensemble, features):
    """Out-of-bag component paths of a fitted ensemble on every row of ``features``.

    Rows that were never part of the estimation sample (forecast rows) are
    out-of-bag for every member.  Rows with zero out-of-bag coverage are
    reported as NaN by :meth:`ComponentPaths.mean` (see ``gaps()``).
    """
    n = features.n_obs
    draws = ensemble.member_outputs(features.inputs())
    oob = ~ensemble.inbag_mask(n)
    in_sample = np.zeros(n, dtype=bool)
    in_sample[ensemble.train_rows] = True
    paths = ComponentPaths(
        features.dates, draws, oob, in_sample, ensemble.config.train_frac, ensemble.config.oob_denominator
    )
    gaps = paths.gaps()
    if len(gaps):
        log.warning("%d row(s) have no out-of-bag draw", len(gaps))
    return paths


def identify_factorization(paths, target_std, center=False):
    """Fix the scale of each state path and rescale its coefficient inversely.

    For every hemisphere ``j`` with ``state:j`` / ``coef:j`` draws: each
    member's state path is first scaled to unit standard deviation over the
    estimation rows (removing the arbitrary per-member scale), then all
    members are scaled by a common factor so that the out-of-bag mean path has
    standard deviation ``target_std`` (scalar or ``{name: std}``).  Coefficient
    draws are divided by the same factors.  Contribution and prediction draws
    are not touched, so they stay bit-identical.

    With ``center=True`` the data-hemisphere contributions are additionally
    shifted to mean zero over the estimation rows and the shifts absorbed into
    the trend contribution; products are then no longer preserved.
    """
    names = [k[len("state:") :] for k in paths.draws if k.startswith("state:")]
    if not names:
        raise ValueError("paths carry no factorized state/coefficient pairs")
    draws = dict(paths.draws)
    rows = paths.in_sample
    for name in names:
        std = target_std[name] if isinstance(target_std, dict) else target_std
        if std is None:
            continue
        state = draws[f"state:{name}"]
        sd_b = state[:, rows].std(axis=1)
        if np.any(sd_b == 0):
            raise DataError(f"state path {name!r} has zero variance in at least one draw")
        k_b = (1.0 / sd_b)[:, None]
        scaled = ComponentPaths(paths.dates, {"s": state * k_b}, paths.oob, rows, paths.train_frac, paths.denominator)
        sd = np.nanstd(scaled.mean("s")[rows])
        if not sd > 0:
            raise DataError(f"state path {name!r} has zero variance")
        k = k_b * (std / sd)
        draws[f"state:{name}"] = state * k
        draws[f"coef:{name}"] = draws[f"coef:{name}"] / k
    if center:
        trend = [k for k in draws if k.startswith("h:") and k[2:] not in names]
        shift = np.zeros((paths.n_draws, 1))
        for name in names:
            h = draws[f"h:{name}"]
            m = h[:, rows].mean(axis=1, keepdims=True)
            draws[f"h:{name}"] = h - m
            shift += m
        if trend:
            draws[trend[0]] = draws[trend[0]] + shift
    return replace(paths, draws=draws)


# persistence ------------------------------------------------------------


def save_ensemble(ensemble, directory):
    """Write ``ensemble.json`` (structure, allocations) and ``weights.npz`` (parameters)."""
    import json
    import os
    from dataclasses import asdict

    os.makedirs(directory, exist_ok=True)
    arrays, members = {}, []
    for b, m in enumerate(ensemble.members):
        nets = {}
        for key, net in sorted(m.model.nets.items()):
            meta = net.to_dict()
            meta.pop("params")
            nets[key] = meta
            for i, p in enumerate(net.params):
                arrays[f"m{b}/{key}/{i}"] = p
        arrays[f"m{b}/alloc/train"] = m.allocation.train
        arrays[f"m{b}/alloc/holdout"] = m.allocation.holdout
        arrays[f"m{b}/holdout_path"] = m.holdout_path
        members.append(
            {
                "draw": m.draw,
                "attempt": m.attempt,
                "best_epoch": m.best_epoch,
                "vol_norm": m.model.vol_norm,
                "input_dims": m.model.input_dims,
                "nets": nets,
            }
        )
    arrays["train_rows"] = ensemble.train_rows
    meta = {
        "format": "hnnpc-ensemble/1",
        "arch": ensemble.arch.to_dict(),
        "config": asdict(ensemble.config),
        "members": members,
    }
    with open(os.path.join(directory, "ensemble.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    np.savez_compressed(os.path.join(directory, "weights.npz"), **arrays)


def load_ensemble(directory):
    import json
    import os

    from .model import HnnArchitecture
    from .nn import DenseNet

    with open(os.path.join(directory, "ensemble.json")) as fh:
        meta = json.load(fh)
    if meta.get("format") != "hnnpc-ensemble/1":
        raise ValueError(f"{directory}: not an ensemble directory")
    arch = HnnArchitecture(**meta["arch"])
    config = TrainConfig(**meta["config"])
    members = []
    with np.load(os.path.join(directory, "weights.npz")) as z:
        for b, mm in enumerate(meta["members"]):
            model = HnnModel.__new__(HnnModel)
            model.arch = arch
            model.input_dims = {k: int(v) for k, v in mm["input_dims"].items()}
            model.vol_norm = mm["vol_norm"]
            model.nets = {}
            for key, nd in mm["nets"].items():
                n_params = 2 * (len(nd["sizes"]) - 1)
                d = dict(nd, params=[{"shape": z[f"m{b}/{key}/{i}"].shape, "values": z[f"m{b}/{key}/{i}"]} for i in range(n_params)])
                model.nets[key] = DenseNet.from_dict(d)
            alloc = Allocation(z[f"m{b}/alloc/train"], z[f"m{b}/alloc/holdout"])
            members.append(Member(model, alloc, mm["best_epoch"], z[f"m{b}/holdout_path"], mm["draw"], mm["attempt"]))
        rows = z["train_rows"]
    return EnsembleResult(members, rows, config, arch)
