"""
Pseudo-out-of-sample evaluation
===============================

Every model sees the panel truncated at the forecast origin.  Benchmarks are
re-fitted each quarter, the network every fourth origin.  RMSEs are reported
relative to an iterated AR(4), on all origins and without an excluded window.
"""

from hnnpc.bench import ARForecaster, HnnForecaster, OosPlan, PCForecaster, RollingMeanForecaster, run_oos
from hnnpc.data import HemisphereSpec, TargetSpec
from hnnpc.estimation import TrainConfig
from hnnpc.model import HnnArchitecture
from hnnpc.synthetic import synthetic_panel

# a small FRED-QD-like panel in levels with transformation codes
panel = synthetic_panel(T=200, seed=0)
target = TargetSpec("CPIAUCSL", horizon=1, tcode=5, scale=400.0)  # annualised quarterly inflation

specs = [
    HemisphereSpec("real_activity", ("AWHMAN", "PAYEMS", "UNRATE", "INDPRO", "HWIx")),
    HemisphereSpec("sr_expectations", ("Y", "inf_mich", "spf_cpih1")),
    HemisphereSpec("commodities", ("OILPRICEx",)),
    HemisphereSpec("lr_expectations", ("trend",), role="coefficient"),
]
arch = HnnArchitecture("factorized", ("real_activity", "sr_expectations", "commodities"),
                       state_layers=2, state_neurons=32, coef_layers=2, coef_neurons=16)

plan = OosPlan("2005Q1", "2009Q3", start="1962Q1", exclusions=(("2008Q3", "2009Q1"),))
models = [
    ARForecaster(),
    RollingMeanForecaster(4),
    RollingMeanForecaster(40),
    PCForecaster("GDPGAP", window=40),
    PCForecaster("GDPGAP", {"OILPRICEx": None}, window=40),
    HnnForecaster(arch, specs, TrainConfig(n_members=5, epochs=200, seed=0), cadence=4),
]
result = run_oos(plan, models, panel, target)
print(result.summary().to_string(index=False, float_format="%.3f"))
result.to_csv("oos_demo")
