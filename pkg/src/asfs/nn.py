"""Small dense-network engine with hand-written backpropagation.

Everything runs in float64. Layers are plain containers of arrays; the
forward/backward functions are pure so that gradient checks can call them
on perturbed copies without hidden caches getting in the way.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError

ACTIVATIONS = ("sigmoid", "tanh", "relu", "softmax", "identity")

BCE_CLAMP = 1e-7


def sigmoid(x):
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def activate(name, z):
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softmax":
        return softmax(z, axis=1)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_backward(name, out, upstream):
    """Gradient w.r.t. the pre-activation, given the activation output."""
    if name == "sigmoid":
        return upstream * out * (1.0 - out)
    if name == "tanh":
        return upstream * (1.0 - out * out)
    if name == "relu":
        return upstream * (out > 0)
    if name == "softmax":
        return out * (upstream - np.sum(upstream * out, axis=1, keepdims=True))
    if name == "identity":
        return upstream
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """Fully connected layer ``activation(x @ weights.T + bias)``.

    ``weights`` has shape ``(out, in)``.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )

    @classmethod
    def glorot(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(w, np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> dict:
        return {"weight": self.weights, "bias": self.bias}

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def _check_input(layer: DenseLayer, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise DimensionError(f"layer expects (batch, {layer.n_in}) input, got {x.shape}")


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    _check_input(layer, x)
    return activate(layer.activation, x @ layer.weights.T + layer.bias)


def dense_backward(layer: DenseLayer, x: np.ndarray, upstream: np.ndarray, out=None):
    """Backpropagate ``upstream`` (dL/d output) through one layer.

    Returns ``({"weight": dW, "bias": db}, dL/dx)``. ``out`` may carry the
    forward output to skip recomputing it.
    """
    _check_input(layer, x)
    if upstream.shape != (x.shape[0], layer.n_out):
        raise DimensionError(
            f"upstream gradient {upstream.shape} does not match output "
            f"({x.shape[0]}, {layer.n_out})"
        )
    if out is None:
        out = activate(layer.activation, x @ layer.weights.T + layer.bias)
    dz = activation_backward(layer.activation, out, upstream)
    grads = {"weight": dz.T @ x, "bias": dz.sum(axis=0)}
    return grads, dz @ layer.weights


class Sequential:
    """A stack of dense layers with named parameters ``"<i>.weight"``."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise DimensionError(f"layer widths {a.n_out} -> {b.n_in} do not chain")

    @classmethod
    def build(cls, widths, activations, rng):
        if len(activations) != len(widths) - 1:
            raise ValueError("need one activation per layer")
        return cls(
            DenseLayer.glorot(n_in, n_out, act, rng)
            for n_in, n_out, act in zip(widths[:-1], widths[1:], activations)
        )

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def forward(self, x):
        """Return the list of activations, input first, output last."""
        acts = [x]
        for layer in self.layers:
            acts.append(dense_forward(layer, acts[-1]))
        return acts

    def __call__(self, x):
        return self.forward(x)[-1]

    def backward(self, acts, upstream):
        grads = {}
        g = upstream
        for i in range(len(self.layers) - 1, -1, -1):
            layer_grads, g = dense_backward(self.layers[i], acts[i], g, out=acts[i + 1])
            grads[f"{i}.weight"] = layer_grads["weight"]
            grads[f"{i}.bias"] = layer_grads["bias"]
        return grads, g

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{i}.weight"] = layer.weights
            out[f"{i}.bias"] = layer.bias
        return out

    def specs(self):
        return [(l.n_in, l.n_out, l.activation) for l in self.layers]

    def copy(self):
        return Sequential(l.copy() for l in self.layers)


def prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in d.items()}


# ---------------------------------------------------------------- losses


def _same_shape(pred, target):
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {target.shape}")


def loss_mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over features, averaged over the batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _same_shape(pred, target)
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_bce(pred: np.ndarray, target: np.ndarray):
    """Binary cross-entropy (natural log), mean over features and batch.

    Predictions are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero
    where the clamp is active.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _same_shape(pred, target)
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("binary cross-entropy targets must be 0 or 1")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / pred.size
    grad[(pred < BCE_CLAMP) | (pred > 1.0 - BCE_CLAMP)] = 0.0
    return float(np.mean(loss)), grad


def loss_categorical_ce(logits: np.ndarray, labels: np.ndarray):
    """Softmax cross-entropy from logits; labels are class indices."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range for {c} classes")
    labels = labels.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(n), labels] - logsum
    grad = np.exp(shifted - logsum[:, None])
    grad[np.arange(n), labels] -= 1.0
    return float(-np.mean(logp)), grad / n


# ------------------------------------------------------------ optimizers


def _check_finite(grads: dict):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")


@dataclass
class RMSprop:
    learning_rate: float = 0.001
    decay: float = 0.9
    eps: float = 1e-8
    kind: str = field(default="RMSprop", init=False)
    state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def step(self, params: dict, grads: dict):
        """Update ``params`` in place. Keys in ``grads`` must exist in ``params``."""
        _check_finite(grads)
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise DimensionError(f"{name}: parameter {p.shape} vs grad {g.shape}")
            v = self.state.get(name)
            if v is None:
                v = self.state[name] = np.zeros_like(p)
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p -= self.learning_rate * g / np.sqrt(v + self.eps)


@dataclass
class Adam:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kind: str = field(default="Adam", init=False)
    state: dict = field(default_factory=dict, repr=False)
    t: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def step(self, params: dict, grads: dict):
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise DimensionError(f"{name}: parameter {p.shape} vs grad {g.shape}")
            if name not in self.state:
                self.state[name] = (np.zeros_like(p), np.zeros_like(p))
            m, v = self.state[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def optimizer_step(state, params: dict, grads: dict):
    state.step(params, grads)
    return params
