"""Post-estimation analysis: permutation importance, contribution shares, PCA ablations."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError


def _member_rows(ensemble, n_obs, oob):
    """Per member, the estimation rows the importance is averaged over."""
    rows = ensemble.train_rows
    if not oob:
        return [rows] * ensemble.size
    inbag = ensemble.inbag_mask(n_obs)
    return [rows[~inbag[b, rows]] for b in range(ensemble.size)]


def variable_importance(
    ensemble,
    features,
    hemisphere,
    variable,
    reps=30,
    rng=None,
    quantity="state",
    oob=True,
    joint=True,
    subtract_one=False,
    _cache=None,
):
    """Permutation importance of ``variable`` for the component of ``hemisphere``.

    All columns of the variable (its lags and moving averages) are permuted
    over the estimation rows with one shared permutation (``joint=False``
    permutes each column independently).  The component is recomputed
    without re-estimation and its mean squared displacement is expressed
    relative to the variance of the original component::

        VI = 100 * mean_t (h(X_perm) - h(X))**2 / Var(h(X))

    averaged over ``reps`` permutations and ensemble members, using each
    member's out-of-bag rows when ``oob``.  An input the component does not
    depend on scores 0.  ``subtract_one=True`` reports the ratio minus one
    instead, which gives -100 for such an input; rankings are unaffected.
    """
    rng = np.random.default_rng(rng)
    block = features.blocks[hemisphere]
    try:
        cols = block.columns_of(variable)
    except KeyError:
        raise KeyError(f"{variable!r} is not in hemisphere {hemisphere!r}") from None
    inputs = features.inputs()
    est = ensemble.train_rows
    member_rows = _member_rows(ensemble, features.n_obs, oob)
    if _cache is None:
        _cache = [m.model.hemisphere_output(hemisphere, inputs, quantity) for m in ensemble.members]
    base = _cache
    ratios = []
    X0 = block.values
    for _ in range(reps):
        X = X0.copy()
        if joint:
            perm = rng.permutation(len(est))
            X[np.ix_(est, cols)] = X0[np.ix_(est[perm], cols)]
        else:
            for c in cols:
                X[est, c] = X0[est[rng.permutation(len(est))], c]
        shuffled = inputs.replace(hemisphere, X)
        for m, h, rows in zip(ensemble.members, base, member_rows):
            if len(rows) < 2:
                continue
            var = h[rows].var()
            if not var > 0:
                raise DataError(f"component {hemisphere!r} has zero variance; importance undefined")
            h_tilde = m.model.hemisphere_output(hemisphere, shuffled, quantity)
            ratios.append(np.mean((h_tilde[rows] - h[rows]) ** 2) / var)
    if not ratios:
        raise DataError("no member has out-of-bag rows")
    value = float(np.mean(ratios))
    return 100.0 * (value - 1.0 if subtract_one else value)


@dataclass
class VIReport:
    hemisphere: str
    values: dict  # variable -> VI, sorted descending
    reps: int

    @property
    def ranking(self):
        return list(self.values)

    def to_frame(self):
        return pd.DataFrame(
            {
                "hemisphere": self.hemisphere,
                "variable": list(self.values),
                "vi": list(self.values.values()),
                "rank": np.arange(1, len(self.values) + 1),
                "reps": self.reps,
            }
        )

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def top_json(self, n=25):
        """Plot-ready ``{"hemisphere", "labels", "values"}`` for the top ``n`` variables."""
        items = list(self.values.items())[:n]
        return json.dumps(
            {"hemisphere": self.hemisphere, "labels": [k for k, _ in items], "values": [v for _, v in items]},
            indent=2,
        )


def importance_report(ensemble, features, hemisphere, reps=30, rng=None, variables=None, **kwargs):
    """:func:`variable_importance` for every variable of a hemisphere, ranked."""
    rng = np.random.default_rng(rng)
    block = features.blocks[hemisphere]
    variables = variables or block.mnemonics
    quantity = kwargs.get("quantity", "state")
    cache = [m.model.hemisphere_output(hemisphere, features.inputs(), quantity) for m in ensemble.members]
    values = {
        v: variable_importance(ensemble, features, hemisphere, v, reps, rng, _cache=cache, **kwargs)
        for v in variables
    }
    ordered = dict(sorted(values.items(), key=lambda kv: (-kv[1], kv[0])))
    return VIReport(hemisphere, ordered, reps)


def contribution_shares(contributions):
    """Absolute shares ``|h_j(t)| / sum_k |h_k(t)|``.

    ``contributions`` is a mapping ``name -> path`` or a
    :class:`~hnnpc.estimation.ComponentPaths` (its ``h:*`` out-of-bag means
    are used).  Returns a DataFrame with one column per component.
    """
    if hasattr(contributions, "draws"):
        paths = contributions
        contributions = {k[2:]: paths.mean(k) for k in paths.names if k.startswith("h:")}
    frame = pd.DataFrame({k: np.abs(np.asarray(v, dtype=float)) for k, v in contributions.items()})
    total = frame.sum(axis=1, min_count=1)  # rows without any value stay NaN
    if (total == 0).any():
        raise DataError(f"all components are zero at rows {list(np.flatnonzero(total.to_numpy() == 0))[:5]}")
    return frame.div(total, axis=0)


@dataclass
class PCAResult:
    scores: np.ndarray
    loadings: np.ndarray
    explained: float  # share of total variance captured by the first component


def pca_extract(X, weights=None, reference=None, standardize=True):
    """First principal component of a feature block.

    Columns are standardised (unless ``standardize=False``) and, when
    ``weights`` are given, multiplied by ``weights / mean(weights)`` before
    the decomposition.  The sign is chosen so that the scores correlate
    non-negatively with ``reference`` (or, without one, so that loadings sum
    to a non-negative number).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need a (T, p) matrix with T >= 2")
    if standardize:
        sd = X.std(axis=0)
        keep = sd > 0
        if not keep.any():
            raise DataError("every column is constant")
        Z = np.zeros_like(X)
        Z[:, keep] = (X[:, keep] - X[:, keep].mean(axis=0)) / sd[keep]
    else:
        Z = X - X.mean(axis=0)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (X.shape[1],) or np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be non-negative, one per column, not all zero")
        Z = Z * (w / w.mean())
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    if not s[0] > 0:
        raise DataError("matrix has rank zero")
    scores = U[:, 0] * s[0]
    loadings = Vt[0].copy()
    if reference is not None:
        flip = np.corrcoef(scores, np.asarray(reference, dtype=float))[0, 1] < 0
    else:
        flip = loadings.sum() < 0
    if flip:
        scores, loadings = -scores, -loadings
    return PCAResult(scores, loadings, float(s[0] ** 2 / np.sum(s**2)))


def expand_weights(block, variable_weights, floor=0.0):
    """Per-column weights for a hemisphere block from per-variable values (e.g. VI).

    Negative values are clipped at ``floor``.
    """
    return np.array([max(float(variable_weights.get(m, 0.0)), floor) for m, _ in block.names])
