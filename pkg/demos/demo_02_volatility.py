"""
Joint mean and volatility estimation
====================================

The volatility variant adds a positive output ``h_v`` trained with the
mean-variance loss.  On data with a persistent high/low volatility regime the
out-of-bag ``h_v`` should track the true standard deviation.
"""

import numpy as np

from hnnpc.estimation import TrainConfig, fit_ensemble, oob_components
from hnnpc.model import HnnArchitecture
from hnnpc.synthetic import volatility_dgp

sim = volatility_dgp(T=400, sigma=(0.5, 2.0), seed=1)

arch = HnnArchitecture("volatility", ("gap", "expectations"), state_layers=2, state_neurons=32,
                       coef_layers=2, coef_neurons=16, vol_layers=2, vol_neurons=32)
ens = fit_ensemble(arch, sim.features, TrainConfig(n_members=12, epochs=400, seed=1))
paths = oob_components(ens, sim.features)

vol = paths.mean("vol")
ok = np.isfinite(vol)
print(f"corr(h_v, sigma) = {np.corrcoef(vol[ok], sim.truth['sigma'][ok])[0, 1]:.3f}")

# h_v = slow * fast: the slow part follows the coefficient paths, the fast part the data
for regime in (0, 1):
    sel = ok & (sim.truth["regime"] == regime)
    print(f"regime {regime}: true sigma {sim.truth['sigma'][sel][0]:.1f}, "
          f"mean h_v {vol[sel].mean():.2f}, mean fast part {np.nanmean(paths.mean('vol:fast')[sel]):.2f}")
