"""Dense fully-connected networks with hand-written backprop, and Adam.

Arrays are float64 numpy arrays, samples in rows. A layer computes
``act(x @ W + b)`` with ``W`` of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "epswae-mlp"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Activation:
    """Activation tag: ``relu``, ``leaky_relu``, ``sigmoid`` or ``identity``."""

    name: str
    slope: float = 0.01

    def __post_init__(self):
        if self.name not in ("relu", "leaky_relu", "sigmoid", "identity"):
            raise ValueError(f"unknown activation {self.name!r}")
        if self.name == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")

    def __call__(self, z):
        if self.name == "relu":
            return np.maximum(z, 0.0)
        if self.name == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        if self.name == "sigmoid":
            return 1.0 / (1.0 + np.exp(-z))
        return z

    def backward(self, z, a, grad):
        # subgradient at the kink is 0
        if self.name == "relu":
            return grad * (z > 0)
        if self.name == "leaky_relu":
            return grad * np.where(z > 0, 1.0, self.slope)
        if self.name == "sigmoid":
            return grad * a * (1.0 - a)
        return grad


RELU = Activation("relu")
IDENTITY = Activation("identity")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = RELU

    @property
    def fan_in(self):
        return self.weight.shape[0]

    @property
    def fan_out(self):
        return self.weight.shape[1]


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # x @ W + b
    post: list = field(default_factory=list)     # act(pre)


class MLP:
    """A stack of dense layers.

    Parameters are exposed as a flat list ``[W0, b0, W1, b1, ...]`` so that
    optimizers and checkpointing do not need to know about layers.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ShapeError("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ShapeError(
                    f"layer widths do not compose: {prev.fan_out} -> {nxt.fan_in}")
        for layer in layers:
            if layer.bias.shape != (layer.fan_out,):
                raise ShapeError("bias length must equal layer fan-out")
        self.layers = layers

    @classmethod
    def build(cls, sizes, rng, hidden=RELU, output=IDENTITY):
        """Kaiming-uniform initialised network with widths ``sizes``."""
        layers = []
        n = len(sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w_bound = np.sqrt(6.0 / fan_in)
            b_bound = 1.0 / np.sqrt(fan_in)
            layers.append(Layer(
                weight=rng.uniform(-w_bound, w_bound, size=(fan_in, fan_out)),
                bias=rng.uniform(-b_bound, b_bound, size=fan_out),
                activation=output if i == n - 1 else hidden,
            ))
        return cls(layers)

    @property
    def in_dim(self):
        return self.layers[0].fan_in

    @property
    def out_dim(self):
        return self.layers[-1].fan_out

    @property
    def params(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def set_params(self, params):
        params = list(params)
        if len(params) != 2 * len(self.layers):
            raise ShapeError("parameter count mismatch")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError("parameter shape mismatch")
            layer.weight, layer.bias = w, b

    def copy(self):
        return MLP([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)[0]


def forward(net, batch):
    """Run ``batch`` through ``net``; returns ``(output, cache)``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"expected a batch with {net.in_dim} columns, got shape {x.shape}")
    cache = ForwardCache()
    for layer in net.layers:
        cache.inputs.append(x)
        z = x @ layer.weight + layer.bias
        x = layer.activation(z)
        cache.pre.append(z)
        cache.post.append(x)
    return x, cache


def backward(net, cache, grad_output):
    """Backpropagate ``grad_output`` (dLoss/dOutput).

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    ``net.params``.
    """
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise ShapeError(f"grad_output shape {g.shape} != output shape {cache.post[-1].shape}")
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        g = layer.activation.backward(cache.pre[i], cache.post[i], g)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, g


class Adam:
    """Adam with bias correction.

    Moments are kept as one flat vector over all parameter arrays.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.shapes = [p.shape for p in params]
        size = sum(p.size for p in params)
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        if len(grads) != len(self.shapes):
            raise ShapeError("gradient count does not match optimizer state")
        for g, shape in zip(grads, self.shapes):
            if g.shape != shape:
                raise ShapeError("gradient shape does not match parameter")
        g = np.concatenate([a.ravel() for a in grads])
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * g
        self.v *= b2
        self.v += (1.0 - b2) * (g * g)
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        start = 0
        for p in params:
            p -= update[start:start + p.size].reshape(p.shape)
            start += p.size


def to_dict(net):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [
            {
                "fan_in": layer.fan_in,
                "fan_out": layer.fan_out,
                "activation": layer.activation.name,
                "slope": layer.activation.slope,
                "weight": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ],
    }


def from_dict(record):
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an MLP checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')}")
    layers = []
    for entry in record["layers"]:
        w = np.array(entry["weight"], dtype=np.float64).reshape(entry["fan_in"], entry["fan_out"])
        b = np.array(entry["bias"], dtype=np.float64)
        layers.append(Layer(w, b, Activation(entry["activation"], entry["slope"])))
    return MLP(layers)


def save(net, path):
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(to_dict(net)))


def load(path):
    return from_dict(json.loads(Path(path).read_text()))
