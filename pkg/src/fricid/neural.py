"""Small multilayer perceptrons with hand-written reverse mode and Adam.

Parameters live in one flat float64 vector.  Each layer stores its weight
matrix of shape ``(fan_in, fan_out)`` in row-major order, followed by its
bias.  All functions accept a single input vector or a batch ``(B, input_dim)``;
parameter gradients are summed over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

ACTIVATIONS = ("relu", "mish", "tanh", "identity")
SOFTPLUS_LINEAR = 20.0


def softplus(x):
    out = np.empty_like(x)
    big = x > SOFTPLUS_LINEAR
    small = x < -SOFTPLUS_LINEAR
    mid = ~(big | small)
    out[big] = x[big]
    out[small] = np.exp(x[small])
    out[mid] = np.log1p(np.exp(x[mid]))
    return out


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def mish(x):
    x = np.asarray(x, dtype=float)
    return x * np.tanh(softplus(x))


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0), None
    if name == "tanh":
        y = np.tanh(x)
        return y, y
    if name == "mish":
        t = np.tanh(softplus(x))
        return x * t, t
    return x, None


def _act_grad(name, x, aux, upstream):
    if name == "relu":
        return upstream * (x > 0)
    if name == "tanh":
        return upstream * (1.0 - aux * aux)
    if name == "mish":
        return upstream * (aux + x * (1.0 - aux * aux) * sigmoid(x))
    return upstream


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    output_dim: int
    hidden: tuple = (32, 32)
    activation: str = "mish"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ShapeError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + self.hidden + (self.output_dim,)

    def layout(self) -> list:
        """Per layer ``(w_start, w_shape, b_start, b_len)`` offsets into the flat vector."""
        out, pos = [], 0
        w = self.widths
        for fan_in, fan_out in zip(w[:-1], w[1:]):
            out.append((pos, (fan_in, fan_out), pos + fan_in * fan_out, fan_out))
            pos += fan_in * fan_out + fan_out
        return out

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["input_dim"]), int(d["output_dim"]), tuple(d["hidden"]), d["activation"])


def _layers(spec, params):
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.n_params,):
        raise ShapeError(f"expected {spec.n_params} parameters, got {params.shape}")
    for w0, shape, b0, nb in spec.layout():
        yield params[w0:w0 + shape[0] * shape[1]].reshape(shape), params[b0:b0 + nb]


def _check_input(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.input_dim:
        raise ShapeError(f"input has dimension {x.shape[-1]}, expected {spec.input_dim}")
    return x


def forward(spec: MLPSpec, params, x, return_cache=False):
    x = _check_input(spec, x)
    layers = list(_layers(spec, params))
    h = x
    cache = []
    for i, (w, b) in enumerate(layers):
        pre = h @ w + b
        if i < len(layers) - 1:
            post, aux = _act(spec.activation, pre)
        else:
            post, aux = pre, None
        cache.append((h, pre, aux))
        h = post
    return (h, cache) if return_cache else h


def backward(spec: MLPSpec, params, x, upstream, cache=None):
    """Vector-Jacobian product of the network output.

    Returns ``(param_grad, input_grad)`` where ``param_grad`` is the flat
    gradient of ``sum(upstream * output)`` summed over the batch.
    """
    x = _check_input(spec, x)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape[-1] != spec.output_dim:
        raise ShapeError(f"upstream gradient has dimension {upstream.shape[-1]}, "
                         f"expected {spec.output_dim}")
    if cache is None:
        _, cache = forward(spec, params, x, return_cache=True)
    layers = list(_layers(spec, params))
    grad = np.empty(spec.n_params)
    g = upstream
    layout = spec.layout()
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in, pre, aux = cache[i]
        if i < len(layers) - 1:
            g = _act_grad(spec.activation, pre, aux, g)
        w0, shape, b0, nb = layout[i]
        if g.ndim == 1:
            grad[w0:w0 + shape[0] * shape[1]] = np.outer(h_in, g).ravel()
            grad[b0:b0 + nb] = g
        else:
            grad[w0:w0 + shape[0] * shape[1]] = (h_in.reshape(-1, shape[0]).T
                                                 @ g.reshape(-1, shape[1])).ravel()
            grad[b0:b0 + nb] = g.reshape(-1, shape[1]).sum(axis=0)
        g = g @ w.T
    return grad, g


def init_params(spec: MLPSpec, seed, gain=None) -> np.ndarray:
    """Variance-scaled uniform weights (variance ``gain / fan_in``), zero biases."""
    rng = np.random.default_rng(seed)
    if gain is None:
        gain = 2.0 if spec.activation == "relu" else 1.0
    params = np.zeros(spec.n_params)
    for w0, shape, _, _ in spec.layout():
        limit = np.sqrt(3.0 * gain / shape[0])
        params[w0:w0 + shape[0] * shape[1]] = rng.uniform(-limit, limit, shape[0] * shape[1])
    return params


def lipschitz_bound(spec: MLPSpec, params) -> float:
    """Product of layer spectral norms times the activation slope bound."""
    slope = {"relu": 1.0, "tanh": 1.0, "identity": 1.0, "mish": 1.1}[spec.activation]
    bound = 1.0
    layers = list(_layers(spec, params))
    for i, (w, _) in enumerate(layers):
        bound *= np.linalg.norm(w, 2) * (slope if i < len(layers) - 1 else 1.0)
    return float(bound)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=1e-3, **kw):
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params, grad, maximize=False):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or np.shape(params) != grad.shape:
        raise ShapeError("parameter, gradient and moment layouts differ")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NumericalError(f"non-finite gradient at {bad.size} coordinates (first index {bad[0]})")
    if maximize:
        grad = -grad
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new = np.asarray(params, dtype=float) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)


@dataclass
class Standardizer:
    """Per-dimension affine map ``(x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.ones_like(self.mean) if self.scale is None else np.asarray(self.scale, dtype=float)

    @classmethod
    def fit(cls, data, min_scale=1e-6):
        data = np.asarray(data, dtype=float)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), min_scale))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, x):
        return (x - self.mean) / self.scale


@dataclass(frozen=True)
class RNNSpec:
    """Stacked Elman recurrent layers followed by a linear read-out."""

    input_dim: int
    output_dim: int
    hidden: int = 32
    layers: int = 3
    activation: str = "relu"

    def shapes(self) -> list:
        out = []
        for i in range(self.layers):
            fan_in = self.input_dim if i == 0 else self.hidden
            out += [(fan_in, self.hidden), (self.hidden, self.hidden), (self.hidden,)]
        out += [(self.hidden, self.output_dim), (self.output_dim,)]
        return out

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes()))

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim, "hidden": self.hidden,
                "layers": self.layers, "activation": self.activation}


def _rnn_unpack(spec, params):
    out, pos = [], 0
    for s in spec.shapes():
        n = int(np.prod(s))
        out.append(params[pos:pos + n].reshape(s))
        pos += n
    return out


def rnn_init(spec: RNNSpec, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chunks = []
    for s in spec.shapes():
        if len(s) == 1:
            chunks.append(np.zeros(s))
        else:
            limit = np.sqrt(3.0 / s[0])
            chunks.append(rng.uniform(-limit, limit, s).ravel())
    return np.concatenate([c.ravel() for c in chunks])


def rnn_forward(spec: RNNSpec, params, xs, h0=None, return_cache=False):
    """Run over a sequence ``xs`` of shape ``(T, B, input_dim)``.

    Returns outputs ``(T, B, output_dim)`` and final hidden states.
    """
    mats = _rnn_unpack(spec, np.asarray(params, dtype=float))
    steps, batch = xs.shape[0], xs.shape[1]
    h = [np.zeros((batch, spec.hidden)) if h0 is None else h0[i] for i in range(spec.layers)]
    outs = np.empty((steps, batch, spec.output_dim))
    cache = []
    for t in range(steps):
        inp = xs[t]
        step_cache = []
        for i in range(spec.layers):
            wx, wh, b = mats[3 * i:3 * i + 3]
            pre = inp @ wx + h[i] @ wh + b
            post, aux = _act(spec.activation, pre)
            step_cache.append((inp, h[i], pre, aux))
            h[i] = post
            inp = post
        outs[t] = inp @ mats[-2] + mats[-1]
        cache.append((step_cache, inp))
    if return_cache:
        return outs, h, cache
    return outs, h


def rnn_backward(spec: RNNSpec, params, cache, upstream):
    """Backpropagation through time for ``sum(upstream * outputs)``."""
    mats = _rnn_unpack(spec, np.asarray(params, dtype=float))
    grads = [np.zeros_like(m) for m in mats]
    dh_next = [None] * spec.layers
    for t in range(len(cache) - 1, -1, -1):
        step_cache, top = cache[t]
        g_top = upstream[t]
        grads[-2] += top.T @ g_top
        grads[-1] += g_top.sum(axis=0)
        g = g_top @ mats[-2].T
        for i in range(spec.layers - 1, -1, -1):
            wx, wh, _ = mats[3 * i:3 * i + 3]
            inp, h_prev, pre, aux = step_cache[i]
            if dh_next[i] is not None:
                g = g + dh_next[i]
            gpre = _act_grad(spec.activation, pre, aux, g)
            grads[3 * i] += inp.T @ gpre
            grads[3 * i + 1] += h_prev.T @ gpre
            grads[3 * i + 2] += gpre.sum(axis=0)
            dh_next[i] = gpre @ wh.T
            g = gpre @ wx.T
    return np.concatenate([gr.ravel() for gr in grads])
