"""Dense feed-forward networks with hand-written reverse-mode gradients.

Only what the hemisphere networks need: affine layers, ReLU / absolute-value /
linear activations, inverted dropout and Adam.  Everything is full batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "abs", "linear")
WEIGHTS_FORMAT = "hnnpc-densenet/1"


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "abs":
        return np.abs(z)
    return z


def _act_grad(name, z):
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "abs":
        return np.sign(z)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    """Intermediate values of one forward pass, consumed by ``backward``."""

    inputs: list = field(default_factory=list)  # input to each layer (post-dropout)
    pre: list = field(default_factory=list)  # pre-activations
    masks: list = field(default_factory=list)  # dropout multipliers, or None


class DenseNet:
    """Fully connected network ``x -> a_L(W_L ... a_1(W_1 x + b_1) ... + b_L)``.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``[p, 400, 400, 400, 1]``.
    activations : sequence of str, optional
        One per affine layer.  Defaults to ReLU on hidden layers and a linear
        output.  ``"abs"`` is only allowed on the last layer.
    dropout : float
        Inverted-dropout rate applied to hidden-layer outputs in training mode.
    dropout_output : bool
        Also drop units of the final layer.  Used when the output feeds a
        further (shared) network rather than being a prediction.
    rng : numpy Generator or int, optional
        Used for initialisation only.
    """

    def __init__(self, sizes, activations=None, dropout=0.0, rng=None, dropout_output=False):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["linear"]
        activations = list(activations)
        if len(activations) != n_layers:
            raise ValueError("need one activation per affine layer")
        for i, a in enumerate(activations):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            if a == "abs" and i != n_layers - 1:
                raise ValueError("abs activation is only allowed on the output layer")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.sizes = sizes
        self.activations = activations
        self.dropout = float(dropout)
        self.dropout_output = bool(dropout_output)
        self.params = self._init_params(np.random.default_rng(rng))

    def _init_params(self, rng):
        params = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.activations[i] == "relu":
                limit = np.sqrt(6.0 / fan_in)  # He-uniform
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))  # Glorot-uniform
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            params.extend([W, b])
        assert len(params) == 2 * n_layers
        return params

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def weights(self):
        return self.params[0::2]

    @property
    def biases(self):
        return self.params[1::2]

    def copy(self):
        other = DenseNet.__new__(DenseNet)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.dropout = self.dropout
        other.dropout_output = self.dropout_output
        other.params = [p.copy() for p in self.params]
        return other

    def forward(self, X, train=False, rng=None):
        """Evaluate the network.

        Returns the output matrix ``(n, sizes[-1])`` and a :class:`ForwardCache`.
        In training mode with a positive dropout rate, hidden activations are
        multiplied by ``Bernoulli(1 - rate) / (1 - rate)`` masks drawn from
        ``rng``; evaluation mode is deterministic and needs no rescaling.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ValueError(
                f"input has shape {X.shape}, network expects {self.sizes[0]} columns"
            )
        use_dropout = train and self.dropout > 0.0
        if use_dropout and rng is None:
            raise ValueError("training-mode dropout needs an rng")
        cache = ForwardCache()
        a = X
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            cache.inputs.append(a)
            z = a @ W + b
            cache.pre.append(z)
            a = _act(self.activations[i], z)
            if use_dropout and (i < self.n_layers - 1 or self.dropout_output):
                keep = 1.0 - self.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
                cache.masks.append(mask)
            else:
                cache.masks.append(None)
        return a, cache

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given ``dL/d(output)``.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` aligned to
        ``self.params``.
        """
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            mask = cache.masks[i]
            if mask is not None:
                g = g * mask
            g = g * _act_grad(self.activations[i], cache.pre[i])
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    # serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "format": WEIGHTS_FORMAT,
            "sizes": self.sizes,
            "activations": self.activations,
            "dropout": self.dropout,
            "dropout_output": self.dropout_output,
            "params": [
                {"shape": list(p.shape), "values": p.ravel(order="C").tolist()}
                for p in self.params
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != WEIGHTS_FORMAT:
            raise ValueError(f"unsupported weight format {d.get('format')!r}")
        net = cls.__new__(cls)
        net.sizes = [int(s) for s in d["sizes"]]
        net.activations = list(d["activations"])
        net.dropout = float(d["dropout"])
        net.dropout_output = bool(d.get("dropout_output", False))
        net.params = [
            np.asarray(p["values"], dtype=float).reshape(p["shape"]) for p in d["params"]
        ]
        expected = []
        for fan_in, fan_out in zip(net.sizes[:-1], net.sizes[1:]):
            expected += [(fan_in, fan_out), (fan_out,)]
        if [p.shape for p in net.params] != expected:
            raise ValueError("parameter shapes do not match layer sizes")
        return net

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list | None = None
    v: list | None = None


def adam_step(params, grads, state):
    """One in-place Adam update with bias correction.

    ``params`` and ``grads`` are parallel lists of arrays; ``state`` is
    updated in place and returned.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
