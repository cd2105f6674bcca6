"""Run configuration: TOML files validated against a JSON schema.

A configuration describes one complete run: data source, supervisor,
hemispheres, architecture, training, identification, forecasting plan,
variable importance and ablation settings.  ``SCHEMA`` is the reference for
every key; see ``docs/config.md`` for a walk-through.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import HemisphereSpec, TargetSpec
from .errors import ConfigError
from .estimation import TrainConfig
from .model import VARIANTS, HnnArchitecture

_period = {"type": "string", "pattern": r"^\d{4}[Qq][1-4]$"}
_names = {"type": "array", "items": {"type": "string"}}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hnnpc run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["data", "target", "hemispheres"],
    "properties": {
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "seed": {"type": "integer", "minimum": 0},
                "variant": {"enum": list(VARIANTS)},
                "out": {"type": "string"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path", "train_end"],
            "properties": {
                "path": {"type": "string", "description": "CSV path, or 'synthetic' for the bundled simulated panel"},
                "synthetic_obs": {"type": "integer", "minimum": 80},
                "synthetic_seed": {"type": "integer", "minimum": 0},
                "start": _period,
                "train_end": _period,
                "card": {"enum": ["features", "variables", "none"]},
                "lags": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "mas": {"type": "array", "items": {"type": "integer", "minimum": 2}},
                "drop_short_before": _period,
            },
        },
        "target": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mnemonic"],
            "properties": {
                "mnemonic": {"type": "string"},
                "horizon": {"type": "integer", "minimum": 1},
                "aggregation": {"enum": ["one-step", "mean", "sum"]},
                "tcode": {"type": "integer", "minimum": 1, "maximum": 7},
                "scale": {"type": "number"},
            },
        },
        "hemispheres": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "role": {"enum": ["state", "coefficient", "volatility"]},
                    "mnemonics": _names,
                    "include_trend": {"type": "boolean"},
                    "tcode_overrides": {
                        "type": "object",
                        "additionalProperties": {"type": "integer", "minimum": 1, "maximum": 7},
                    },
                },
            },
        },
        "architecture": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "additive_layers": {"type": "integer", "minimum": 1},
                "additive_neurons": {"type": "integer", "minimum": 1},
                "share_weights": {"type": "boolean"},
                "state_layers": {"type": "integer", "minimum": 1},
                "state_neurons": {"type": "integer", "minimum": 1},
                "coef_layers": {"type": "integer", "minimum": 1},
                "coef_neurons": {"type": "integer", "minimum": 1},
                "vol_layers": {"type": "integer", "minimum": 1},
                "vol_neurons": {"type": "integer", "minimum": 1},
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "train_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "block_len": {"type": "integer", "minimum": 1},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "n_members": {"type": "integer", "minimum": 1},
                "loss": {"enum": ["mse", "mean_variance"]},
                "stop_metric": {"enum": ["mse", "loss"]},
                "freeze_volatility": {"type": "boolean"},
                "max_attempts": {"type": "integer", "minimum": 1},
                "oob_denominator": {"enum": ["count", "paper"]},
            },
        },
        "identification": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target_std": {"type": "number", "exclusiveMinimum": 0},
                "std_from": {"type": "string", "description": "panel column whose std (estimation rows) fixes the state scale"},
                "center": {"type": "boolean"},
                "band_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "forecast": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "first_origin": _period,
                "last_origin": _period,
                "start": _period,
                "net_cadence": {"type": "integer", "minimum": 1},
                "bench_cadence": {"type": "integer", "minimum": 1},
                "exclusions": {"type": "array", "items": {"type": "array", "items": _period, "minItems": 2, "maxItems": 2}},
                "models": _names,
                "gap": {"type": "string"},
                "pc_extras": _names,
                "pc_window": {"type": "integer", "minimum": 4},
                "external": {"type": "object", "additionalProperties": {"type": "string"}},
            },
        },
        "vi": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hemispheres": _names,
                "reps": {"type": "integer", "minimum": 1},
                "quantity": {"enum": ["state", "contribution"]},
                "top": {"type": "integer", "minimum": 1},
                "subtract_one": {"type": "boolean"},
                "joint": {"type": "boolean"},
            },
        },
        "ablation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hemispheres": _names,
                "weighted": {"type": "boolean"},
                "vi_reps": {"type": "integer", "minimum": 1},
                "all_contemporaneous": {"type": "boolean"},
            },
        },
    },
}

DEFAULT_MODELS = ["AR4", "1y Avg", "10y Avg", "PC", "PC+", "network"]


@dataclass
class RunConfig:
    raw: dict
    source: str | None = None  # file the configuration came from
    base_dir: str = "."

    # --- sections with defaults filled in --------------------------------
    @property
    def run(self):
        return {"name": "run", "seed": 0, "variant": "factorized", "out": "runs", **self.raw.get("run", {})}

    @property
    def seed(self):
        return int(self.run["seed"])

    @property
    def variant(self):
        return self.run["variant"]

    @property
    def data(self):
        d = {"start": None, "card": "features", "lags": [0, 1, 2, 3], "mas": [2, 4, 8], "drop_short_before": None,
             "synthetic_obs": 200, "synthetic_seed": 0}
        d.update(self.raw["data"])
        return d

    @property
    def target(self):
        return TargetSpec(**self.raw["target"])

    @property
    def specs(self):
        out = []
        additive = self.variant == "additive"
        for h in self.raw["hemispheres"]:
            h = dict(h)
            role = h.get("role", "state")
            inc = h.pop("include_trend", additive and role == "state")
            out.append(HemisphereSpec(h["name"], tuple(h.get("mnemonics", ())), inc, role, dict(h.get("tcode_overrides", {}))))
        return out

    @property
    def architecture(self):
        specs = self.specs
        states = tuple(s.name for s in specs if s.role == "state")
        trend = next((s.name for s in specs if s.role == "coefficient"), None)
        vol = next((s for s in specs if s.role == "volatility"), None)
        kw = dict(self.raw.get("architecture", {}))
        inc = tuple(s.name for s in specs if s.role == "state" and s.include_trend) if self.variant == "additive" else ()
        return HnnArchitecture(
            variant=self.variant,
            hemispheres=states,
            trend_name=trend,
            vol_inputs=(vol.name,) if vol is not None and vol.mnemonics else None,
            include_trend=inc,
            dropout=self.raw.get("training", {}).get("dropout", 0.2),
            **kw,
        )

    def training(self, n_jobs=1):
        return TrainConfig(seed=self.seed, n_jobs=n_jobs, **self.raw.get("training", {}))

    @property
    def identification(self):
        return {"target_std": 1.0, "std_from": None, "center": False, "band_level": 0.68, **self.raw.get("identification", {})}

    @property
    def forecast(self):
        d = {"first_origin": "2008Q1", "last_origin": "2021Q3", "start": self.data["start"] or "1961Q3",
             "net_cadence": 4, "bench_cadence": 1, "exclusions": None, "models": list(DEFAULT_MODELS),
             "gap": None, "pc_extras": [], "pc_window": 60, "external": {}}
        d.update(self.raw.get("forecast", {}))
        return d

    @property
    def vi(self):
        states = [s.name for s in self.specs if s.role == "state"]
        return {"hemispheres": states, "reps": 30, "quantity": "state", "top": 25, "subtract_one": False, "joint": True,
                **self.raw.get("vi", {})}

    @property
    def ablation(self):
        states = [s.name for s in self.specs if s.role == "state"]
        return {"hemispheres": states, "weighted": True, "vi_reps": 10, "all_contemporaneous": True,
                **self.raw.get("ablation", {})}

    # --- identity ----------------------------------------------------------
    def canonical(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def model_digest(self):
        """Hash of the sections that determine the estimated ensemble."""
        keys = ("data", "target", "hemispheres", "architecture", "training")
        part = {k: self.raw.get(k) for k in keys}
        part["seed"], part["variant"] = self.seed, self.variant
        return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()

    def data_path(self):
        p = self.data["path"]
        if p == "synthetic":
            return None
        if os.path.isabs(p) or os.path.exists(p):
            return p
        return os.path.join(self.base_dir, p)


def validate(raw):
    """Raise :class:`ConfigError` when ``raw`` violates :data:`SCHEMA` or cross-field rules."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = RunConfig(raw)
    try:
        cfg.target
        cfg.architecture
        cfg.training()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def shipped():
    """Names of the configurations bundled with the package."""
    return sorted(p.name[:-5] for p in resources.files("hnnpc.configs").iterdir() if p.name.endswith(".toml"))


def _set(raw, dotted, value):
    """Assign ``value`` at a dotted path; integer parts index into arrays (``hemispheres.0.name``)."""
    keys = dotted.split(".")
    node = raw
    try:
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
        if isinstance(node, list):
            node[int(keys[-1])] = value
        else:
            node[keys[-1]] = value
    except (ValueError, IndexError, TypeError, AttributeError):
        raise ConfigError(f"cannot set {dotted!r}: no such location") from None


def parse_override(item):
    """``"training.n_members=4"`` -> ``("training.n_members", 4)`` (value parsed as TOML)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, value = item.split("=", 1)
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return key.strip(), parsed


def load(path_or_name, overrides=()):
    """Load a TOML file (or a shipped configuration by name) and validate it."""
    if os.path.exists(path_or_name):
        with open(path_or_name, "rb") as fh:
            text = fh.read()
        source, base = os.path.abspath(path_or_name), os.path.dirname(os.path.abspath(path_or_name))
    elif path_or_name in shipped():
        text = resources.files("hnnpc.configs").joinpath(path_or_name + ".toml").read_bytes()
        source, base = f"shipped:{path_or_name}", os.getcwd()
    else:
        raise ConfigError(f"no config file {path_or_name!r} (shipped: {', '.join(shipped())})")
    try:
        raw = tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path_or_name}: {exc}") from None
    raw = copy.deepcopy(raw)
    for key, value in overrides:
        _set(raw, key, value)
    cfg = validate(raw)
    cfg.source, cfg.base_dir = source, base
    return cfg
