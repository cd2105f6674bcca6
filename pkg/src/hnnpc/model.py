"""Hemisphere neural networks.

Three architectures are supported:

``additive``
    One sub-network per hemisphere, prediction is the sum of their scalar
    outputs.  Layers after the first can be shared across hemispheres.
``factorized``
    Every data hemisphere ``j`` gets a *state* network on its inputs and a
    *coefficient* network on the time trend only, whose output goes through
    an absolute value.  The contribution is their product; a trend-only
    network adds a long-run level.
``volatility``
    ``factorized`` plus a conditional-volatility head
    ``h_v(t) = slow(t) * exp(fast(X_t))`` where ``slow`` is the mean of the
    coefficient paths rescaled to average one, trained with the mean-variance
    loss.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import DenseNet

VARIANTS = ("additive", "factorized", "volatility")
VOL_FLOOR = 1e-6  # keeps the slow volatility path away from an exact zero


@dataclass
class HnnArchitecture:
    variant: str = "factorized"
    hemispheres: tuple = ()  # data hemispheres, in output order
    trend_name: str = "lr"  # trend-only hemisphere; None to omit it
    additive_layers: int = 5
    additive_neurons: int = 400
    share_weights: bool = True
    state_layers: int = 3
    state_neurons: int = 400
    coef_layers: int = 3
    coef_neurons: int = 100
    vol_layers: int = 3
    vol_neurons: int = 100
    vol_inputs: tuple | None = None  # blocks feeding the fast volatility net; None = all hemispheres
    include_trend: tuple = ()  # additive only: hemispheres that also see t
    dropout: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.hemispheres = tuple(self.hemispheres)
        self.include_trend = tuple(self.include_trend)
        if self.vol_inputs is not None:
            self.vol_inputs = tuple(self.vol_inputs)
        if not self.hemispheres:
            raise ValueError("at least one data hemisphere is required")
        if len(set(self.hemispheres)) != len(self.hemispheres):
            raise ValueError("hemisphere names must be unique")
        if self.trend_name in self.hemispheres:
            raise ValueError("trend hemisphere name clashes with a data hemisphere")
        if self.variant != "additive" and self.include_trend:
            raise ValueError("include_trend only applies to the additive variant")
        unknown = set(self.include_trend) - set(self.hemispheres)
        if unknown:
            raise ValueError(f"include_trend names unknown hemispheres {sorted(unknown)}")

    @property
    def factorized(self):
        return self.variant in ("factorized", "volatility")

    @property
    def has_volatility(self):
        return self.variant == "volatility"

    def to_dict(self):
        return asdict(self)


@dataclass
class HnnInputs:
    """Model inputs: one feature block per data hemisphere plus the time trend."""

    blocks: dict
    trend: np.ndarray

    def __post_init__(self):
        self.trend = np.asarray(self.trend, dtype=float).reshape(-1)
        self.blocks = {k: np.asarray(v, dtype=float) for k, v in self.blocks.items()}
        for k, v in self.blocks.items():
            if v.ndim != 2 or v.shape[0] != self.trend.shape[0]:
                raise ValueError(f"block {k!r} has shape {v.shape}, expected ({len(self.trend)}, p)")

    @property
    def n_obs(self):
        return self.trend.shape[0]

    def take(self, rows):
        return HnnInputs({k: v[rows] for k, v in self.blocks.items()}, self.trend[rows])

    def replace(self, name, block):
        blocks = dict(self.blocks)
        blocks[name] = block
        return HnnInputs(blocks, self.trend)

    def dims(self):
        return {k: v.shape[1] for k, v in self.blocks.items()}


@dataclass
class ComponentOutput:
    """Per-observation outputs of one model.

    ``contributions[j]`` are the additive pieces of the prediction.  For the
    factorized variants ``contributions[j] = coefficients[j] * states[j]`` for
    each data hemisphere, and the trend hemisphere contributes directly.
    """

    prediction: np.ndarray
    contributions: dict
    states: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)
    volatility: np.ndarray | None = None
    vol_slow: np.ndarray | None = None
    vol_fast: np.ndarray | None = None

    def flat(self):
        """All paths keyed ``yhat``, ``h:<name>``, ``state:<name>``, ``coef:<name>``, ``vol*``."""
        out = {"yhat": self.prediction}
        out.update({f"h:{k}": v for k, v in self.contributions.items()})
        out.update({f"state:{k}": v for k, v in self.states.items()})
        out.update({f"coef:{k}": v for k, v in self.coefficients.items()})
        if self.volatility is not None:
            out["vol"] = self.volatility
            out["vol:slow"] = self.vol_slow
            out["vol:fast"] = self.vol_fast
        return out


# losses ---------------------------------------------------------------


def loss_mse(y, yhat):
    y, yhat = np.asarray(y, dtype=float), np.asarray(yhat, dtype=float)
    return float(np.mean((y - yhat) ** 2))


def loss_mean_variance(y, yhat, h_v):
    """Joint mean/volatility objective ``mean(((y - yhat) / h_v)**2 + 1) * h_v)``.

    Minimised pointwise over ``h_v`` at ``h_v = |y - yhat|``.
    """
    y, yhat, h_v = (np.asarray(a, dtype=float) for a in (y, yhat, h_v))
    if np.any(~(h_v > 0)):
        raise ValueError("volatility must be strictly positive")
    return float(np.mean((((y - yhat) / h_v) ** 2 + 1.0) * h_v))


# model ----------------------------------------------------------------


def _net(sizes, dropout, rng, activations=None, dropout_output=False):
    return DenseNet(sizes, activations, dropout=dropout, rng=rng, dropout_output=dropout_output)


class HnnModel:
    """One member of an HNN ensemble: a set of named sub-networks.

    Parameters
    ----------
    arch : HnnArchitecture
    input_dims : dict
        Number of columns of each data hemisphere block.
    rng : numpy Generator or int, optional
        Initialisation seed.
    """

    def __init__(self, arch, input_dims, rng=None):
        self.arch = arch
        self.input_dims = {k: int(input_dims[k]) for k in arch.hemispheres}
        if arch.has_volatility:
            for k in self.vol_blocks:
                if k not in input_dims:
                    raise ValueError(f"volatility input block {k!r} missing")
                self.input_dims[k] = int(input_dims[k])
        self.vol_norm = None
        self.nets = self._build(np.random.default_rng(rng))

    @property
    def vol_blocks(self):
        a = self.arch
        return a.vol_inputs if a.vol_inputs is not None else a.hemispheres

    def _additive_names(self):
        names = list(self.arch.hemispheres)
        if self.arch.trend_name:
            names.append(self.arch.trend_name)
        return names

    def _additive_width(self, name):
        if name == self.arch.trend_name:
            return 1
        return self.input_dims[name] + (1 if name in self.arch.include_trend else 0)

    def _build(self, rng):
        a = self.arch
        nets = {}
        if a.variant == "additive":
            n, L = a.additive_neurons, a.additive_layers
            for name in self._additive_names():
                p = self._additive_width(name)
                if a.share_weights:
                    nets[f"first:{name}"] = _net([p, n], a.dropout, rng, ["relu"], dropout_output=True)
                else:
                    nets[f"full:{name}"] = _net([p] + [n] * L + [1], a.dropout, rng)
            if a.share_weights:
                nets["tail"] = _net([n] * L + [1], a.dropout, rng)
            return nets
        for name in a.hemispheres:
            nets[f"state:{name}"] = _net(
                [self.input_dims[name]] + [a.state_neurons] * a.state_layers + [1], a.dropout, rng
            )
            coef = _net(
                [1] + [a.coef_neurons] * a.coef_layers + [1],
                a.dropout,
                rng,
                ["relu"] * a.coef_layers + ["abs"],
            )
            coef.params[-1][:] = 1.0  # start near a unit coefficient, off the |.| kink
            nets[f"coef:{name}"] = coef
        if a.trend_name:
            nets[f"trend:{a.trend_name}"] = _net([1] + [a.coef_neurons] * a.coef_layers + [1], a.dropout, rng)
        if a.has_volatility:
            p = sum(self.input_dims[k] for k in self.vol_blocks)
            nets["vol"] = _net([p] + [a.vol_neurons] * a.vol_layers + [1], a.dropout, rng)
        return nets

    # parameters -------------------------------------------------------

    def parameters(self):
        return [p for key in sorted(self.nets) for p in self.nets[key].params]

    def set_parameters(self, params):
        i = 0
        for key in sorted(self.nets):
            net = self.nets[key]
            n = len(net.params)
            net.params = [np.array(p, dtype=float, copy=True) for p in params[i : i + n]]
            i += n
        if i != len(params):
            raise ValueError("parameter list length mismatch")

    def copy(self):
        other = HnnModel.__new__(HnnModel)
        other.arch = self.arch
        other.input_dims = dict(self.input_dims)
        other.vol_norm = self.vol_norm
        other.nets = {k: v.copy() for k, v in self.nets.items()}
        return other

    # forward ----------------------------------------------------------

    def _vol_input(self, inputs):
        return np.hstack([inputs.blocks[k] for k in self.vol_blocks])

    def _hemisphere_input(self, name, inputs):
        if name == self.arch.trend_name:
            return inputs.trend[:, None]
        X = inputs.blocks[name]
        if name in self.arch.include_trend:
            X = np.hstack([X, inputs.trend[:, None]])
        return X

    def _check(self, inputs):
        for k, p in self.input_dims.items():
            if k not in inputs.blocks:
                raise ValueError(f"inputs lack hemisphere {k!r}")
            if inputs.blocks[k].shape[1] != p:
                raise ValueError(
                    f"hemisphere {k!r} has {inputs.blocks[k].shape[1]} features, model expects {p}"
                )

    def forward(self, inputs, train=False, rng=None, vol_norm=None):
        """Full forward pass.

        ``vol_norm`` is the divisor that rescales the slow volatility path to
        mean one.  When ``None`` it is the batch mean (used while training);
        otherwise pass the value frozen at the end of training.

        Returns ``(ComponentOutput, cache)``.
        """
        self._check(inputs)
        if self.arch.variant == "additive":
            return self._forward_additive(inputs, train, rng)
        return self._forward_factorized(inputs, train, rng, vol_norm)

    def _forward_additive(self, inputs, train, rng):
        a = self.arch
        names = self._additive_names()
        T = inputs.n_obs
        cache = {"names": names}
        if a.share_weights:
            hidden = []
            for name in names:
                h, c = self.nets[f"first:{name}"].forward(self._hemisphere_input(name, inputs), train, rng)
                hidden.append(h)
                cache[f"first:{name}"] = c
            out, c = self.nets["tail"].forward(np.vstack(hidden), train, rng)
            cache["tail"] = c
            out = out.reshape(len(names), T)
        else:
            rows = []
            for name in names:
                o, c = self.nets[f"full:{name}"].forward(self._hemisphere_input(name, inputs), train, rng)
                rows.append(o[:, 0])
                cache[f"full:{name}"] = c
            out = np.vstack(rows)
        contributions = {name: out[i] for i, name in enumerate(names)}
        prediction = out.sum(axis=0)
        return ComponentOutput(prediction, contributions), cache

    def _forward_factorized(self, inputs, train, rng, vol_norm):
        a = self.arch
        t = inputs.trend[:, None]
        cache = {}
        states, coefs, contributions = {}, {}, {}
        total = np.zeros(inputs.n_obs)
        for name in a.hemispheres:
            s, cs = self.nets[f"state:{name}"].forward(inputs.blocks[name], train, rng)
            g, cg = self.nets[f"coef:{name}"].forward(t, train, rng)
            cache[f"state:{name}"], cache[f"coef:{name}"] = cs, cg
            states[name], coefs[name] = s[:, 0], g[:, 0]
            contributions[name] = coefs[name] * states[name]
            total = total + contributions[name]
        if a.trend_name:
            lr, cl = self.nets[f"trend:{a.trend_name}"].forward(t, train, rng)
            cache[f"trend:{a.trend_name}"] = cl
            contributions[a.trend_name] = lr[:, 0]
            total = total + lr[:, 0]
        out = ComponentOutput(total, contributions, states, coefs)
        if a.has_volatility:
            slow_raw = np.mean([coefs[k] for k in a.hemispheres], axis=0) + VOL_FLOOR
            batch_norm = vol_norm is None
            norm = float(slow_raw.mean()) if batch_norm else float(vol_norm)
            if not norm > 0:
                raise FloatingPointError("coefficient paths collapsed to zero; volatility undefined")
            z, cv = self.nets["vol"].forward(self._vol_input(inputs), train, rng)
            fast = np.exp(z[:, 0])
            slow = slow_raw / norm
            out.volatility = slow * fast
            out.vol_slow, out.vol_fast = slow, fast
            cache.update(vol=cv, slow_raw=slow_raw, norm=norm, batch_norm=batch_norm)
        return out, cache

    def predict(self, inputs):
        """Evaluation-mode components using the frozen volatility normalisation."""
        if self.arch.has_volatility and self.vol_norm is None:
            raise RuntimeError("volatility normalisation not set; train the model first")
        return self.forward(inputs, vol_norm=self.vol_norm)[0]

    def hemisphere_output(self, name, inputs, quantity="state"):
        """Output of the part of the network that reads hemisphere ``name``.

        ``quantity="state"`` gives the state network for the factorized
        variants (the contribution for ``additive``); ``"contribution"`` gives
        the product with the coefficient path.
        """
        if quantity not in ("state", "contribution"):
            raise ValueError(f"unknown quantity {quantity!r}")
        self._check(inputs)
        a = self.arch
        if a.factorized:
            if name not in a.hemispheres:
                raise KeyError(name)
            s = self.nets[f"state:{name}"](inputs.blocks[name])[:, 0]
            if quantity == "state":
                return s
            return self.nets[f"coef:{name}"](inputs.trend[:, None])[:, 0] * s
        X = self._hemisphere_input(name, inputs)
        if a.share_weights:
            return self.nets["tail"](self.nets[f"first:{name}"](X))[:, 0]
        return self.nets[f"full:{name}"](X)[:, 0]

    # gradients --------------------------------------------------------

    def loss_and_grad(self, inputs, y, loss="mse", train=True, rng=None, freeze_volatility=False):
        """Loss and its gradient with respect to :meth:`parameters`.

        ``loss`` is ``"mse"`` or ``"mean_variance"``.  With
        ``freeze_volatility`` the mean-variance loss is evaluated at
        ``h_v = 1`` and the volatility network receives no gradient.
        Returns ``(loss, grads, vol_norm)`` where ``vol_norm`` is the batch
        normalisation used (``None`` without a volatility head).
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        out, cache = self.forward(inputs, train=train, rng=rng)
        T = y.shape[0]
        e = y - out.prediction
        grad_vol = None
        if loss == "mse":
            value = float(np.mean(e**2))
            grad_pred = -2.0 * e / T
        elif loss == "mean_variance":
            if freeze_volatility or not self.arch.has_volatility:
                h = np.ones(T)
            else:
                h = out.volatility
            value = loss_mean_variance(y, out.prediction, h)
            grad_pred = -2.0 * e / (h * T)
            if self.arch.has_volatility and not freeze_volatility:
                grad_vol = (1.0 - (e / h) ** 2) / T
        else:
            raise ValueError(f"unknown loss {loss!r}")
        grads = self._backward(out, cache, grad_pred, grad_vol)
        norm = cache.get("norm") if self.arch.has_volatility else None
        return value, grads, norm

    def _backward(self, out, cache, grad_pred, grad_vol):
        a = self.arch
        net_grads = {}
        if a.variant == "additive":
            names = cache["names"]
            if a.share_weights:
                g_tail = np.tile(grad_pred, len(names))[:, None]
                net_grads["tail"], g_hidden = self.nets["tail"].backward(cache["tail"], g_tail)
                T = grad_pred.shape[0]
                for i, name in enumerate(names):
                    key = f"first:{name}"
                    net_grads[key], _ = self.nets[key].backward(cache[key], g_hidden[i * T : (i + 1) * T])
            else:
                for name in names:
                    key = f"full:{name}"
                    net_grads[key], _ = self.nets[key].backward(cache[key], grad_pred)
        else:
            grad_coef = {name: grad_pred * out.states[name] for name in a.hemispheres}
            if a.has_volatility:
                if grad_vol is None:
                    net_grads["vol"] = [np.zeros_like(p) for p in self.nets["vol"].params]
                else:
                    net_grads["vol"], _ = self.nets["vol"].backward(cache["vol"], grad_vol * out.volatility)
                    g_slow = grad_vol * out.vol_fast
                    norm, raw = cache["norm"], cache["slow_raw"]
                    g_raw = g_slow / norm
                    if cache["batch_norm"]:
                        g_raw = g_raw - np.sum(g_slow * raw) / (raw.shape[0] * norm**2)
                    for name in a.hemispheres:
                        grad_coef[name] = grad_coef[name] + g_raw / len(a.hemispheres)
            for name in a.hemispheres:
                key = f"state:{name}"
                net_grads[key], _ = self.nets[key].backward(cache[key], grad_pred * out.coefficients[name])
                key = f"coef:{name}"
                net_grads[key], _ = self.nets[key].backward(cache[key], grad_coef[name])
            if a.trend_name:
                key = f"trend:{a.trend_name}"
                net_grads[key], _ = self.nets[key].backward(cache[key], grad_pred)
        return [g for key in sorted(self.nets) for g in net_grads[key]]

    # serialization ----------------------------------------------------

    def to_dict(self):
        return {
            "arch": self.arch.to_dict(),
            "input_dims": self.input_dims,
            "vol_norm": self.vol_norm,
            "nets": {k: v.to_dict() for k, v in sorted(self.nets.items())},
        }

    @classmethod
    def from_dict(cls, d):
        model = cls.__new__(cls)
        model.arch = HnnArchitecture(**d["arch"])
        model.input_dims = {k: int(v) for k, v in d["input_dims"].items()}
        model.vol_norm = d["vol_norm"]
        model.nets = {k: DenseNet.from_dict(v) for k, v in d["nets"].items()}
        return model


# functional forms -------------------------------------------------------


def predict_additive(model, inputs):
    """Prediction and components of an additive model (sum of hemisphere outputs)."""
    if model.arch.variant != "additive":
        raise ValueError("model is not additive")
    out = model.forward(inputs)[0]
    return out.prediction, out


def predict_factorized(model, inputs):
    """Prediction and components of a factorized model.

    ``yhat = trend(t) + sum_j |coef_j(t)| * state_j(X_j)``.
    """
    if not model.arch.factorized:
        raise ValueError("model is not factorized")
    out = model.forward(inputs, vol_norm=model.vol_norm)[0]
    return out.prediction, out


def volatility_head(model, inputs, vol_norm=None):
    """Conditional volatility path ``slow(t) * exp(fast(X_t))`` of a volatility model.

    ``vol_norm`` defaults to the model's frozen normalisation; pass ``None``
    on an untrained model to normalise the slow path to mean one over
    ``inputs``.
    """
    if not model.arch.has_volatility:
        raise ValueError("model has no volatility head")
    norm = vol_norm if vol_norm is not None else model.vol_norm
    return model.forward(inputs, vol_norm=norm)[0].volatility
