import json

import numpy as np
import pandas as pd
import pytest

from hnnpc.analysis import (
    contribution_shares,
    expand_weights,
    importance_report,
    pca_extract,
    variable_importance,
)
from hnnpc.data import FeatureSet
from hnnpc.errors import DataError
from hnnpc.estimation import TrainConfig, fit_ensemble
from hnnpc.synthetic import planted_driver_dgp
from conftest import tiny_arch


@pytest.fixture(scope="module")
def planted():
    sim = planted_driver_dgp(seed=3)
    arch = tiny_arch("factorized", hemispheres=("gap",), state_neurons=16, coef_neurons=8)
    ens = fit_ensemble(arch, sim.features, TrainConfig(n_members=3, epochs=200, seed=3))
    return sim, ens


def _silence(ensemble, features, variable, hemisphere="gap"):
    """Zero the first-layer weights of ``variable`` in every member."""
    cols = features.blocks[hemisphere].columns_of(variable)
    for m in ensemble.members:
        m.model.nets[f"state:{hemisphere}"].params[0][cols, :] = 0.0


def test_planted_driver_ranks_first(planted):
    sim, ens = planted
    rep = importance_report(ens, sim.features, "gap", reps=10, rng=0)
    assert rep.ranking[0] == "gap0"
    assert list(rep.values.values()) == sorted(rep.values.values(), reverse=True)
    assert all(np.isfinite(v) for v in rep.values.values())


def test_inert_input_scores_zero(planted):
    sim, ens = planted
    ens = fit_ensemble(ens.arch, sim.features, ens.config)  # private copy to modify
    _silence(ens, sim.features, "gap5")
    vi = variable_importance(ens, sim.features, "gap", "gap5", reps=200, rng=1)
    assert abs(vi) < 1
    assert vi == 0.0
    assert variable_importance(ens, sim.features, "gap", "gap5", reps=5, rng=1, subtract_one=True) == -100.0


class _Identity(np.random.Generator):
    def permutation(self, n):
        return np.arange(n)


def test_identity_permutation_gives_zero(planted):
    sim, ens = planted
    rng = _Identity(np.random.PCG64(0))
    assert variable_importance(ens, sim.features, "gap", "gap0", reps=3, rng=rng) == 0.0
    assert variable_importance(ens, sim.features, "gap", "gap0", reps=3, rng=rng, joint=False) == 0.0


def test_vi_invariant_to_relabeling_others(planted):
    sim, ens = planted
    fs = sim.features
    a = variable_importance(ens, fs, "gap", "gap0", reps=5, rng=7)
    block = fs.blocks["gap"]
    renamed = [(m if m == "gap0" else m.upper(), k) for m, k in block.names]
    old = block.names
    block.names = renamed
    try:
        b = variable_importance(ens, fs, "gap", "gap0", reps=5, rng=7)
    finally:
        block.names = old
    assert a == b


def test_vi_joint_vs_independent_and_contribution(planted):
    sim, ens = planted
    for kw in ({"joint": False}, {"quantity": "contribution"}, {"oob": False}):
        assert variable_importance(ens, sim.features, "gap", "gap0", reps=3, rng=0, **kw) > 50


def test_vi_unknown_variable(planted):
    sim, ens = planted
    with pytest.raises(KeyError):
        variable_importance(ens, sim.features, "gap", "nope", reps=1)


def test_vi_zero_variance_component(planted):
    sim, ens = planted
    ens = fit_ensemble(ens.arch, sim.features, ens.config)
    for m in ens.members:
        for p in m.model.nets["state:gap"].params:
            p[:] = 0.0
    with pytest.raises(DataError):
        variable_importance(ens, sim.features, "gap", "gap0", reps=1)


def test_report_outputs(planted, tmp_path):
    sim, ens = planted
    rep = importance_report(ens, sim.features, "gap", reps=2, rng=0, variables=["gap0", "gap1", "gap2"])
    rep.to_csv(tmp_path / "vi.csv")
    back = pd.read_csv(tmp_path / "vi.csv")
    assert list(back["variable"]) == rep.ranking and list(back["rank"]) == [1, 2, 3]
    top = json.loads(rep.top_json(2))
    assert top["labels"] == rep.ranking[:2] and len(top["values"]) == 2


def test_multi_column_variable_is_permuted_jointly():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(120)
    X = np.column_stack([x, x, rng.standard_normal(120)])
    names = {"a": [("v", "lag0"), ("v", "ma2"), ("w", "lag0")]}
    fs = FeatureSet.from_arrays({"a": X}, x + 0.1 * rng.standard_normal(120), names=names)
    assert fs.blocks["a"].columns_of("v") == [0, 1]
    ens = fit_ensemble(tiny_arch("factorized", hemispheres=("a",)), fs, TrainConfig(n_members=2, epochs=300))
    rep = importance_report(ens, fs, "a", reps=5, rng=0)
    assert rep.ranking == ["v", "w"]


def test_contribution_shares():
    s = contribution_shares({"a": [1.0, -2.0, np.nan], "b": [3.0, 2.0, np.nan]})
    np.testing.assert_allclose(s["a"][:2], [0.25, 0.5])
    np.testing.assert_allclose(s.sum(axis=1)[:2], 1.0)
    assert s.iloc[2].isna().all()
    with pytest.raises(DataError):
        contribution_shares({"a": [0.0], "b": [0.0]})


def test_pca_single_factor_recovery():
    rng = np.random.default_rng(0)
    f = rng.standard_normal(300)
    X = np.outer(f, rng.uniform(0.5, 2.0, 8)) + 0.1 * rng.standard_normal((300, 8))
    res = pca_extract(X, reference=f)
    assert np.corrcoef(res.scores, f)[0, 1] > 0.99
    assert res.explained > 0.9
    flipped = pca_extract(X, reference=-f)
    np.testing.assert_allclose(flipped.scores, -res.scores)


def test_pca_weights_select_columns():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((200, 3))
    res = pca_extract(X, weights=[0.0, 1.0, 0.0], reference=X[:, 1])
    Z = (X[:, 1] - X[:, 1].mean()) / X[:, 1].std()
    np.testing.assert_allclose(res.scores, 3.0 * Z, atol=1e-10)
    np.testing.assert_allclose(np.abs(res.loadings), [0, 1, 0], atol=1e-12)
    with pytest.raises(ValueError):
        pca_extract(X, weights=[-1.0, 1.0, 1.0])
    with pytest.raises(DataError):
        pca_extract(np.ones((10, 3)))


def test_expand_weights():
    class B:
        names = [("x", "lag0"), ("x", "lag1"), ("y", "lag0"), ("z", "lag0")]

    np.testing.assert_array_equal(expand_weights(B, {"x": 2.0, "y": -3.0}), [2.0, 2.0, 0.0, 0.0])
