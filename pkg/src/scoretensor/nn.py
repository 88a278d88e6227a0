"""MLPs, Fourier feature encoders and Adam."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, OptimizerError, ParameterError

ACTIVATIONS = {"softplus": ad.softplus, "tanh": ad.tanh, None: None}


@dataclass
class MlpParams:
    """Layer stack ``y = act(x @ W.T + b)``; W is (out, in).

    ``activations[k]`` applies after layer k (None for a purely affine layer).
    The arrays may be swapped for tape nodes with :meth:`bind`.
    """

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)) or not self.weights:
            raise ArgumentError("weights, biases and activations must have one entry per layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            ws, bs = _shape(w), _shape(b)
            if len(ws) != 2 or bs != (ws[0],):
                raise ArgumentError(f"layer {k}: weight {ws} and bias {bs} do not match")
            if k and _shape(self.weights[k - 1])[0] != ws[1]:
                raise ArgumentError(f"layer {k} input {ws[1]} does not chain to previous output")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ArgumentError(f"unknown activation {act!r}")

    @property
    def in_dim(self):
        return _shape(self.weights[0])[1]

    @property
    def out_dim(self):
        return _shape(self.weights[-1])[0]

    def named(self, prefix):
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{k}.weight"] = w
            out[f"{prefix}.{k}.bias"] = b
        return out

    def bind(self, nodes, prefix):
        """Copy whose arrays are replaced by ``nodes[name]``."""
        n = len(self.weights)
        return MlpParams(
            [nodes[f"{prefix}.{k}.weight"] for k in range(n)],
            [nodes[f"{prefix}.{k}.bias"] for k in range(n)],
            list(self.activations),
        )


def _shape(a):
    return a.value.shape if isinstance(a, ad.Node) else np.shape(a)


def init_params(sizes, seed, activation="softplus", final_activation=None):
    """Glorot-uniform weights and zero biases for layer widths ``sizes``.

    ``sizes = [in, h1, ..., out]``; hidden layers use ``activation`` and the
    last layer ``final_activation``.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ArgumentError(f"invalid layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append(activation if k < len(sizes) - 2 else final_activation)
    return MlpParams(weights, biases, acts)


def mlp_forward(p, x):
    """Apply the layer stack to ``x`` (a vector or a batch of row vectors)."""
    if _shape(x)[-1] != p.in_dim:
        raise ArgumentError(f"input width {_shape(x)[-1]} does not match MLP input {p.in_dim}")
    h = x
    for w, b, act in zip(p.weights, p.biases, p.activations):
        h = ad.add(ad.dot(h, ad.transpose(w)), b)
        if act is not None:
            h = ACTIVATIONS[act](h)
    return h


@dataclass
class FourierEncoder:
    """Random Fourier features ``[sin(2 pi s B c), cos(2 pi s B c)]``.

    B is (m, k) for k-dimensional coordinates; output width is 2m.
    """

    B: np.ndarray
    scale: float = 1.0
    trainable: bool = False

    def __post_init__(self):
        if _shape(self.B)[0] < 1 or len(_shape(self.B)) != 2:
            raise ArgumentError("frequency matrix must be (m, k) with m >= 1")
        if not self.scale > 0:
            raise ParameterError("encoder scale must be positive")

    @classmethod
    def random(cls, m, k, scale, seed, trainable=False):
        """Frequencies drawn from N(0, scale^2); stored pre-scaled with scale 1."""
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, size=(m, k)), 1.0, trainable)

    @property
    def in_dim(self):
        return _shape(self.B)[1]

    @property
    def out_dim(self):
        return 2 * _shape(self.B)[0]


def fourier_encode(enc, coords):
    if _shape(coords)[-1] != enc.in_dim:
        raise ArgumentError(f"coordinate width {_shape(coords)[-1]} does not match encoder input {enc.in_dim}")
    proj = ad.mul(2.0 * np.pi * enc.scale, ad.dot(coords, ad.transpose(enc.B)))
    return ad.concat([ad.sin(proj), ad.cos(proj)], axis=-1)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads, rows=None):
    """One bias-corrected Adam update, in place on the arrays in ``params``.

    ``rows`` optionally maps a parameter name to the row indices that received
    gradient; only those rows (and their moments) are touched. Nothing is
    modified if any gradient is non-finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise ArgumentError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ArgumentError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for {name!r}; step refused")
    rows = rows or {}
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        sel = rows.get(name)
        if sel is None:
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
        else:
            gs = g[sel]
            m[sel] = b1 * m[sel] + (1.0 - b1) * gs
            v[sel] = b2 * v[sel] + (1.0 - b2) * gs * gs
            p[sel] -= state.lr * (m[sel] / c1) / (np.sqrt(v[sel] / c2) + state.eps_hat)
    return params, state
