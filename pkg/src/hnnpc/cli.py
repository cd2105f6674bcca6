"""Command-line entry point: ``hnnpc {estimate,forecast,vi,ablation,export}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import pandas as pd

from . import __version__, analysis, bench, config as cfgmod
from .data import RawPanel, build_features
from .errors import ConfigError, DataError, DivergenceError, LeakageError
from .estimation import (
    fit_ensemble,
    identify_factorization,
    load_ensemble,
    member_seed,
    oob_components,
    save_ensemble,
)
from .synthetic import synthetic_panel

log = logging.getLogger("hnnpc")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


# shared steps -----------------------------------------------------------


class Run:
    """State shared by the commands of one invocation."""

    def __init__(self, args):
        overrides = [cfgmod.parse_override(s) for s in args.set or []]
        if args.seed is not None:
            overrides.append(("run.seed", args.seed))
        if args.variant is not None:
            overrides.append(("run.variant", args.variant))
        if args.data is not None:
            overrides.append(("data.path", args.data))
        self.cfg = cfgmod.load(args.config, overrides)
        self.out = args.out or self.cfg.run["out"]
        self.threads = args.threads
        self.timings = {}
        self.entries = []
        os.makedirs(self.out, exist_ok=True)
        self.panel, self.fingerprint = self._panel()

    def _panel(self):
        d = self.cfg.data
        path = self.cfg.data_path()
        if path is None:
            panel = synthetic_panel(d["synthetic_obs"], d["synthetic_seed"])
            blob = panel.data.to_csv(float_format="%.17g").encode() + json.dumps(panel.tcodes, sort_keys=True).encode()
            return panel, "sha256:" + hashlib.sha256(blob).hexdigest()
        if not os.path.exists(path):
            raise DataError(f"data file {path!r} not found")
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        return RawPanel.from_csv(path), "sha256:" + digest

    def features(self, train_end=None, panel=None):
        d = self.cfg.data
        return build_features(
            panel or self.panel,
            self.cfg.specs,
            self.cfg.target,
            train_end or d["train_end"],
            start=d["start"],
            lags=tuple(d["lags"]),
            mas=tuple(d["mas"]),
            card=d["card"],
            drop_short_before=d["drop_short_before"],
        )

    def fit(self, features):
        t0 = time.perf_counter()
        ens = fit_ensemble(self.cfg.architecture, features, self.cfg.training(n_jobs=self.threads))
        self.timings["estimate"] = time.perf_counter() - t0
        self.entries = ens.log
        return ens

    def ensemble(self, features, model_dir=None):
        """Load the ensemble saved by ``estimate`` when present, otherwise fit one."""
        model_dir = model_dir or os.path.join(self.out, "model")
        if os.path.exists(os.path.join(model_dir, "ensemble.json")):
            man = os.path.join(self.out, "manifest.json")
            if os.path.exists(man):
                with open(man) as fh:
                    if json.load(fh).get("model_hash") != self.cfg.model_digest():
                        raise ConfigError(f"{model_dir} was estimated with a different configuration")
            log.info("using saved ensemble in %s", model_dir)
            return load_ensemble(model_dir)
        return self.fit(features)

    def target_std(self, features):
        ident = self.cfg.identification
        if ident["std_from"] is None:
            return ident["target_std"]
        col = ident["std_from"]
        if col not in self.panel.data.columns:
            raise DataError(f"identification series {col!r} not in panel")
        s = self.panel.data[col].reindex(features.dates[features.train_rows]).to_numpy(dtype=float)
        s = s[np.isfinite(s)]
        if s.size < 2:
            raise DataError(f"identification series {col!r} has no data on the estimation rows")
        return float(np.std(s))

    def manifest(self, command, extra=None):
        cfg = self.cfg
        n = cfg.training().n_members
        data = {
            "command": command,
            "software": {"hnnpc": __version__, "numpy": np.__version__, "pandas": pd.__version__,
                         "python": platform.python_version()},
            "config_source": cfg.source,
            "config_hash": cfg.digest(),
            "model_hash": cfg.model_digest(),
            "config": cfg.raw,
            "seeds": {
                "root": cfg.seed,
                "members": "SeedSequence([root, draw, attempt]) spawned into (allocation, training)",
                "first_entropy": [list(map(int, member_seed(cfg.seed, b, 0).entropy)) for b in range(min(n, 3))],
            },
            "data_fingerprint": self.fingerprint,
            "threads": self.threads,
            "timings_seconds": self.timings,
            "draws": self.entries,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        data.update(extra or {})
        with open(os.path.join(self.out, "manifest.json" if command == "estimate" else f"manifest-{command}.json"), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=str)


def _write_components(run, ens, features, level):
    paths = oob_components(ens, features)
    if ens.arch.factorized:
        paths = identify_factorization(paths, run.target_std(features), center=run.cfg.identification["center"])
    paths.to_csv(os.path.join(run.out, "components.csv"), level=level)
    wide = pd.DataFrame({"date": [str(d) for d in features.dates], "in_sample": paths.in_sample, "y": features.y})
    for name in paths.names:
        wide[name] = paths.mean(name)
    wide.to_csv(os.path.join(run.out, "contributions.csv"), index=False, float_format="%.17g")
    shares = analysis.contribution_shares(paths)
    shares.insert(0, "date", [str(d) for d in features.dates])
    shares.to_csv(os.path.join(run.out, "shares.csv"), index=False, float_format="%.17g")
    return paths


# commands ---------------------------------------------------------------


def cmd_estimate(args):
    run = Run(args)
    fs = run.features()
    ens = run.fit(fs)
    save_ensemble(ens, os.path.join(run.out, "model"))
    paths = _write_components(run, ens, fs, run.cfg.identification["band_level"])
    run.manifest(
        "estimate",
        {"n_members": ens.size, "n_obs": fs.n_obs, "n_train": int(len(fs.train_rows)),
         "min_oob_draws": int(paths.counts()[paths.in_sample].min())},
    )
    print(f"wrote {len([n for n in paths.names if n.startswith('h:')])} component series to {run.out}")
    return 0


def _models(run):
    fc = run.cfg.forecast
    out = []
    for name in fc["models"]:
        if name == "AR4":
            out.append(bench.ARForecaster())
        elif name == "1y Avg":
            out.append(bench.RollingMeanForecaster(4))
        elif name == "10y Avg":
            out.append(bench.RollingMeanForecaster(40))
        elif name in ("PC", "PC+"):
            if fc["gap"] is None:
                raise ConfigError(f"model {name} needs forecast.gap")
            extras = {m: None for m in fc["pc_extras"]} if name == "PC+" else None
            out.append(bench.PCForecaster(fc["gap"], extras, fc["pc_window"], name=name))
        elif name == "network":
            d = run.cfg.data
            out.append(
                bench.HnnForecaster(
                    run.cfg.architecture,
                    run.cfg.specs,
                    run.cfg.training(n_jobs=run.threads),
                    cadence=fc["net_cadence"],
                    feature_kwargs={"lags": tuple(d["lags"]), "mas": tuple(d["mas"]), "card": d["card"]},
                )
            )
        else:
            raise ConfigError(f"unknown forecast model {name!r}")
    for name, path in fc["external"].items():
        p = path if os.path.isabs(path) or os.path.exists(path) else os.path.join(run.cfg.base_dir, path)
        out.append(bench.ExternalForecaster.from_csv(p, name))
    return out


def cmd_forecast(args):
    run = Run(args)
    fc = run.cfg.forecast
    target = run.cfg.target
    plan = bench.OosPlan(
        fc["first_origin"], fc["last_origin"], fc["start"], target.horizon, fc["net_cadence"], fc["bench_cadence"],
        fc["exclusions"],
    )
    t0 = time.perf_counter()
    result = bench.run_oos(plan, _models(run), run.panel, target)
    run.timings["forecast"] = time.perf_counter() - t0
    result.to_csv(run.out)
    run.manifest("forecast", {"origins": [str(o) for o in plan.origins()]})
    print(result.summary().to_string(index=False))
    return 0


def cmd_vi(args):
    run = Run(args)
    fs = run.features()
    ens = run.ensemble(fs)
    v = run.cfg.vi
    rng = np.random.default_rng([run.cfg.seed, 1])
    quantity = v["quantity"] if ens.arch.factorized else "contribution"
    t0 = time.perf_counter()
    for h in v["hemispheres"]:
        if h not in fs.blocks:
            raise ConfigError(f"vi: unknown hemisphere {h!r}")
        rep = analysis.importance_report(
            ens, fs, h, v["reps"], rng, quantity=quantity, subtract_one=v["subtract_one"], joint=v["joint"]
        )
        rep.to_csv(os.path.join(run.out, f"vi_{h}.csv"))
        with open(os.path.join(run.out, f"vi_{h}_top.json"), "w") as fh:
            fh.write(rep.top_json(v["top"]))
        print(h, ", ".join(rep.ranking[:5]))
    run.timings["vi"] = time.perf_counter() - t0
    run.manifest("vi")
    return 0


def cmd_ablation(args):
    run = Run(args)
    fs = run.features()
    ens = run.ensemble(fs)
    ab = run.cfg.ablation
    paths = oob_components(ens, fs)
    key = "state" if ens.arch.factorized else "h"
    rng = np.random.default_rng([run.cfg.seed, 2])
    cols = {"date": [str(d) for d in fs.dates]}
    explained = {}
    reference = None
    for h in ab["hemispheres"]:
        if h not in fs.blocks:
            raise ConfigError(f"ablation: unknown hemisphere {h!r}")
        block = fs.blocks[h]
        hnn = paths.mean(f"{key}:{h}")
        ref = np.where(np.isfinite(hnn), hnn, 0.0)
        reference = ref if reference is None else reference
        lag0 = [i for i, (_, kind) in enumerate(block.names) if kind == "lag0"]
        X = block.values[:, lag0]
        cols[f"network:{h}"] = hnn
        res = analysis.pca_extract(X, reference=ref)
        cols[f"pca:{h}"], explained[f"pca:{h}"] = res.scores, res.explained
        if ab["weighted"]:
            q = "state" if ens.arch.factorized else "contribution"
            rep = analysis.importance_report(ens, fs, h, ab["vi_reps"], rng, quantity=q)
            w = analysis.expand_weights(block, rep.values)[lag0]
            if w.sum() > 0:
                res = analysis.pca_extract(X, weights=w, reference=ref)
                cols[f"wpca:{h}"], explained[f"wpca:{h}"] = res.scores, res.explained
    if ab["all_contemporaneous"]:
        lag0_all = np.hstack([b.values[:, [i for i, (_, k) in enumerate(b.names) if k == "lag0"]] for b in fs.blocks.values()])
        res = analysis.pca_extract(lag0_all, reference=reference)
        cols["pca_all"], explained["pca_all"] = res.scores, res.explained
        res = analysis.pca_extract(np.hstack([b.values for b in fs.blocks.values()]), reference=reference)
        cols["pca_all_plus"], explained["pca_all_plus"] = res.scores, res.explained
    pd.DataFrame(cols).to_csv(os.path.join(run.out, "ablation.csv"), index=False, float_format="%.17g")
    with open(os.path.join(run.out, "ablation_explained.json"), "w") as fh:
        json.dump(explained, fh, indent=2, sort_keys=True)
    run.manifest("ablation")
    print(f"wrote {len(cols) - 1} extraction paths to {run.out}")
    return 0


def cmd_export(args):
    """Re-export plot-ready files from a saved run and the configuration schema."""
    run = Run(args)
    with open(os.path.join(run.out, "config.schema.json"), "w") as fh:
        json.dump(cfgmod.SCHEMA, fh, indent=2)
    model_dir = os.path.join(args.run or run.out, "model")
    if not os.path.exists(os.path.join(model_dir, "ensemble.json")):
        print(f"wrote config.schema.json to {run.out} (no saved ensemble under {model_dir})")
        return 0
    fs = run.features()
    ens = run.ensemble(fs, model_dir)
    level = args.level or run.cfg.identification["band_level"]
    paths = _write_components(run, ens, fs, level)
    coef = {
        n: [v if np.isfinite(v) else None for v in paths.mean(n).tolist()]  # JSON has no NaN
        for n in paths.names
        if n.startswith("coef:")
    }
    with open(os.path.join(run.out, "coefficients.json"), "w") as fh:
        json.dump({"dates": [str(d) for d in fs.dates], "series": coef}, fh)
    print(f"exported {len(paths.names)} series to {run.out}")
    return 0


COMMANDS = {
    "estimate": (cmd_estimate, "fit the ensemble and write component paths, bands and weights"),
    "forecast": (cmd_forecast, "pseudo-out-of-sample forecasts and RMSE table"),
    "vi": (cmd_vi, "permutation variable importance per hemisphere"),
    "ablation": (cmd_ablation, "PCA extractions to compare with the network states"),
    "export": (cmd_export, "re-export plot-ready files and the config schema"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hnnpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help=f"TOML file or shipped name ({', '.join(cfgmod.shipped())})")
        p.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
        p.add_argument("--threads", type=int, default=1, help="parallel ensemble members (default 1)")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--variant", choices=["additive", "factorized", "volatility"])
        p.add_argument("--data", help="data CSV or 'synthetic' (overrides data.path)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. training.n_members=20")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "export":
            p.add_argument("--run", help="run directory holding model/ (default: --out)")
            p.add_argument("--level", type=float, help="credible band level")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LeakageError as exc:
        print(f"leakage audit failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
