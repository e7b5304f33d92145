"""Fully-connected networks: definition, forward trace, backprop and ADAM training.

Arrays are batch-major: a batch of inputs has shape ``(n, d0)`` and the
pre-activation of layer ``l`` has shape ``(n, d_l)``.  ``W[l]`` has shape
``(d_l, d_{l-1})`` so that ``y = x @ W.T + b``.
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DivergedTraining(RuntimeError):
    """Raised when a loss or network output stops being finite."""


class ActivationKind(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"

    def __call__(self, y):
        if self is ActivationKind.TANH:
            return np.tanh(y)
        return np.maximum(y, 0.0)

    def derivative(self, y):
        if self is ActivationKind.TANH:
            t = np.tanh(y)
            return 1.0 - t * t
        # Heaviside with sigma'(0) = 0
        return (y > 0).astype(float)


class LossKind(str, enum.Enum):
    WEIGHTED_MSE = "weighted_mse"
    CROSS_ENTROPY = "cross_entropy"


@dataclass
class Mlp:
    dims: tuple
    weights: list
    biases: list
    activation: ActivationKind = ActivationKind.TANH

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.activation = ActivationKind(self.activation)
        if len(self.dims) < 3:
            raise ValueError("an Mlp needs at least one hidden layer (len(dims) >= 3)")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.dims) - 1:
            raise ValueError("number of layers does not match dims")
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ValueError(f"layer {l + 1} has shapes {W.shape}, {b.shape}, "
                                 f"expected {(self.dims[l + 1], self.dims[l])}, {(self.dims[l + 1],)}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l + 1} has non-finite parameters")

    @property
    def depth(self):
        """Number of hidden layers L."""
        return len(self.dims) - 2

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @property
    def n_out(self):
        return self.dims[-1]

    def copy(self):
        return copy.deepcopy(self)

    def flat_params(self):
        """Parameters as one vector, ordered W1, b1, W2, b2, ... (W row-major)."""
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_flat_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, k = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(theta[k:k + W.size].reshape(W.shape))
            k += W.size
            biases.append(theta[k:k + b.size].copy())
            k += b.size
        return Mlp(self.dims, weights, biases, self.activation)

    def __call__(self, inputs):
        return forward(self, inputs).output

    def __eq__(self, other):
        if not isinstance(other, Mlp):
            return NotImplemented
        return (self.dims == other.dims and self.activation == other.activation
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    # checkpoint JSON
    def to_dict(self):
        return {
            "dims": list(self.dims),
            "activation": self.activation.value,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            dims = data["dims"]
            layers = data["layers"]
            weights = [np.array(layer["W"], dtype=float).reshape(dims[l + 1], dims[l])
                       for l, layer in enumerate(layers)]
            biases = [np.array(layer["b"], dtype=float) for layer in layers]
            return cls(dims, weights, biases, data.get("activation", "tanh"))
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed checkpoint: {exc}") from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ForwardTrace:
    pre: list   # y^(1) .. y^(L+1)
    post: list  # x^(0) .. x^(L)

    @property
    def output(self):
        return self.pre[-1]

    @property
    def batch_size(self):
        return self.post[0].shape[0]

    def row(self, i):
        """Trace of the single input ``i`` (batch of one)."""
        return ForwardTrace([y[i:i + 1] for y in self.pre], [x[i:i + 1] for x in self.post])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 2400
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossKind = LossKind.WEIGHTED_MSE
    stop_accuracy: Optional[float] = None

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError("epochs must be a non-negative integer")
        self.epochs = int(self.epochs)
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("ADAM betas must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if self.stop_accuracy is not None and not 0 < self.stop_accuracy <= 1:
            raise ValueError("stop_accuracy must lie in (0, 1]")


def init_mlp(dims: Sequence[int], activation="tanh", seed: int = 0) -> Mlp:
    """Glorot-normal weights, zero biases."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3:
        raise ValueError("dims must list at least input, one hidden and output width")
    if min(dims) < 1:
        raise ValueError(f"all widths must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases, activation)


def _as_batch(net, inputs):
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if net.dims[0] == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != net.dims[0]:
        raise ValueError(f"inputs have shape {np.shape(inputs)}, network expects dimension {net.dims[0]}")
    return x


def forward(net: Mlp, inputs) -> ForwardTrace:
    x = _as_batch(net, inputs)
    pre, post = [], [x]
    n_layers = len(net.weights)
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        y = x @ W.T + b
        pre.append(y)
        if l < n_layers - 1:
            x = net.activation(y)
            post.append(x)
    return ForwardTrace(pre, post)


def backprop(net: Mlp, trace: ForwardTrace, dout):
    """Pull ``dout`` (n, d_out) back through the net.

    Returns per-layer ``(dW, db)`` summed over the batch.
    """
    delta = np.asarray(dout, dtype=float)
    grads = []
    for l in range(len(net.weights) - 1, -1, -1):
        x_prev = trace.post[l]
        grads.append((delta.T @ x_prev, delta.sum(axis=0)))
        if l > 0:
            delta = (delta @ net.weights[l]) * net.activation.derivative(trace.pre[l - 1])
    grads.reverse()
    return grads


def softplus(t):
    """ln(1 + e^t) without overflow."""
    t = np.asarray(t, dtype=float)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit_difference(output):
    """f_NN,1 - f_NN,2 for a two-logit classification head."""
    output = np.asarray(output)
    if output.ndim != 2 or output.shape[1] != 2:
        raise ValueError("classification needs a network with exactly two outputs")
    return output[:, 0] - output[:, 1]


def weighted_mse(output, targets, weights):
    r = np.asarray(targets, dtype=float).reshape(output.shape) - output
    w = np.asarray(weights, dtype=float).reshape(-1, 1)
    return float(np.sum(w * r * r))


def cross_entropy_from_logits(t, labels):
    """Sum over nodes of -[chi ln p + (1-chi) ln(1-p)] with p = sigmoid(t)."""
    labels = np.asarray(labels, dtype=float)
    return float(np.sum(labels * softplus(-t) + (1.0 - labels) * softplus(t)))


def nn_losses(net: Mlp, nodes, targets, weights=None, loss=LossKind.WEIGHTED_MSE):
    """Training loss of the network on the given nodes.

    ``weights`` are the quadrature weights for the weighted MSE; they are ignored
    for the cross-entropy, where ``targets`` are 0/1 labels.
    """
    out = forward(net, nodes).output
    if not np.all(np.isfinite(out)):
        raise DivergedTraining("network output is not finite")
    if LossKind(loss) is LossKind.WEIGHTED_MSE:
        if weights is None:
            weights = np.ones(out.shape[0])
        return weighted_mse(out, targets, weights)
    return cross_entropy_from_logits(logit_difference(out), targets)


def accuracy(net: Mlp, nodes, labels):
    """Fraction of nodes whose class (1 iff p > 1/2) matches the label."""
    t = logit_difference(net(nodes))
    return float(np.mean((t > 0).astype(int) == np.asarray(labels).astype(int)))


def loss_and_grad(net: Mlp, nodes, targets, weights=None, loss=LossKind.WEIGHTED_MSE):
    """Loss value and its gradient as a flat vector ordered like ``flat_params``."""
    trace = forward(net, nodes)
    out = trace.output
    if LossKind(loss) is LossKind.WEIGHTED_MSE:
        w = np.ones(out.shape[0]) if weights is None else np.asarray(weights, dtype=float)
        r = out - np.asarray(targets, dtype=float).reshape(out.shape)
        value = float(np.sum(w[:, None] * r * r))
        dout = 2.0 * w[:, None] * r
    else:
        labels = np.asarray(targets, dtype=float)
        t = logit_difference(out)
        value = cross_entropy_from_logits(t, labels)
        g = sigmoid(t) - labels
        dout = np.stack([g, -g], axis=1)
    if not np.isfinite(value):
        raise DivergedTraining(f"loss became {value}")
    grads = backprop(net, trace, dout)
    flat = np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])
    return value, flat


@dataclass
class TrainResult:
    net: Mlp
    history: list = field(default_factory=list)
    accuracy_history: list = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False


def train_adam(net: Mlp, nodes, targets, config: TrainConfig, weights=None, callback=None) -> TrainResult:
    """Full-batch ADAM.

    ``history[k]`` is the loss at the start of epoch ``k``.  For the
    cross-entropy with ``stop_accuracy`` set, training stops as soon as the
    training accuracy exceeds it.  ``callback(epoch, net)`` is invoked before
    every update and once after the final one, which is how epoch checkpoints
    are collected.
    """
    theta = net.flat_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = config.adam_beta1, config.adam_beta2
    current = net.copy()
    result = TrainResult(current)
    classify = config.loss is LossKind.CROSS_ENTROPY
    for epoch in range(config.epochs):
        if callback is not None:
            callback(epoch, current)
        if classify:
            acc = accuracy(current, nodes, targets)
            result.accuracy_history.append(acc)
            if config.stop_accuracy is not None and acc > config.stop_accuracy:
                result.stopped_early = True
                result.epochs_run = epoch
                result.net = current
                return result
        value, grad = loss_and_grad(current, nodes, targets, weights, config.loss)
        result.history.append(value)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** (epoch + 1))
        v_hat = v / (1 - b2 ** (epoch + 1))
        theta = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        if not np.all(np.isfinite(theta)):
            raise DivergedTraining(f"parameters became non-finite at epoch {epoch}")
        current = current.with_flat_params(theta)
    result.epochs_run = config.epochs
    result.net = current
    if callback is not None and config.epochs > 0:
        callback(config.epochs, current)
    return result
