"""Small fully-connected networks with hand-written backpropagation.

Layers are affine maps ``x @ W + b``; hidden layers use a leaky rectifier,
the last layer is linear. Parameters are plain numpy arrays so they can be
handed straight to :func:`optimizer_step`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError

CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float = 0.2

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: input width {w.shape[0]} does not chain")

    @classmethod
    def init(cls, widths, rng: np.random.Generator, slope: float = 0.2) -> "Mlp":
        """Fan-in scaled uniform initialisation, biases zero."""
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ShapeError(f"invalid widths {widths}")
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, slope)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.slope)

    def forward(self, x):
        """Return ``(output, cache)``; the cache feeds :meth:`backward`."""
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.weights[0].shape[0]:
            raise ShapeError(
                f"input shape {np.shape(x)} does not match input width {self.weights[0].shape[0]}"
            )
        inputs, pre = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            a = h @ w + b
            pre.append(a)
            h = a if i == last else np.where(a > 0, a, self.slope * a)
        return h, (inputs, pre)

    def backward(self, cache, dout):
        """Backpropagate ``dout`` (dL/doutput). Returns ``(grads, dinput)``.

        ``grads`` is ordered like :attr:`params`.
        """
        inputs, pre = cache
        grads = [None] * (2 * len(self.weights))
        g = np.asarray(dout, dtype=float)
        for i in reversed(range(len(self.weights))):
            if i != len(self.weights) - 1:
                g = g * np.where(pre[i] > 0, 1.0, self.slope)
            grads[2 * i] = inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        for gr in grads:
            if not np.all(np.isfinite(gr)):
                raise NumericError("non-finite gradient")
        return grads, g


def mlp_apply(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    out, _ = net.forward(x[None, :] if squeeze else x)
    return out[0] if squeeze else out


def logistic_loss(logits, labels):
    """Mean binary cross-entropy on logits. Returns ``(value, dlogits)``."""
    z = np.asarray(logits, dtype=float).reshape(-1)
    y = np.asarray(labels, dtype=float).reshape(-1)
    # log(1 + e^z) - y z, computed stably
    value = np.mean(np.logaddexp(0.0, z) - y * z)
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    grad = (p - y) / z.size
    return float(value), grad.reshape(np.shape(logits))


def squared_loss(outputs, targets):
    """Batch mean of ``0.5 * ||output - target||^2``. Returns ``(value, doutputs)``."""
    out = np.asarray(outputs, dtype=float)
    diff = out - np.asarray(targets, dtype=float)
    n = out.shape[0]
    return float(0.5 * np.sum(diff * diff) / n), diff / n


_LOSSES = {"logistic": logistic_loss, "squared": squared_loss}


def mlp_gradient(net: Mlp, x, targets, loss: str = "squared"):
    """Loss value and parameter gradients of the batch-mean ``loss``.

    The composite VAE loss lives in :mod:`rtcvae.vae` because it needs the
    encoder, decoder and TC estimator together.
    """
    try:
        loss_fn = _LOSSES[loss]
    except KeyError:
        raise ValueError(f"unknown loss {loss!r}; expected one of {sorted(_LOSSES)}") from None
    out, cache = net.forward(x)
    if loss == "logistic" and out.shape[1] != 1:
        raise ShapeError("logistic loss needs a single output unit")
    value, dout = loss_fn(out, np.asarray(targets, dtype=float).reshape(out.shape))
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    grads, _ = net.backward(cache, dout)
    return value, grads


@dataclass
class OptimizerState:
    kind: str
    step_size: float
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, kind: str = "adam", step_size: float = 1e-3) -> "OptimizerState":
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        state = cls(kind, step_size)
        if kind == "adam":
            state.m = [np.zeros_like(p) for p in params]
            state.v = [np.zeros_like(p) for p in params]
        return state


def optimizer_step(state: OptimizerState, params, grads):
    """Update ``params`` in place and return them."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    state.t += 1
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= state.step_size * g
        return params
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError("gradient / buffer shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.step_size * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def save_checkpoint(path, nets: dict[str, Mlp]) -> None:
    """Write networks to an ``.npz`` archive.

    Layout: ``version`` (int), then per network ``<name>/slope`` and
    ``<name>/W<i>``, ``<name>/b<i>`` for each layer.
    """
    arrays = {"version": np.array(CHECKPOINT_VERSION)}
    for name, net in nets.items():
        arrays[f"{name}/slope"] = np.array(net.slope)
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}/W{i}"] = w
            arrays[f"{name}/b{i}"] = b
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> dict[str, Mlp]:
    with np.load(Path(path)) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        names = sorted({k.split("/")[0] for k in data.files if "/" in k})
        nets = {}
        for name in names:
            n_layers = sum(1 for k in data.files if k.startswith(f"{name}/W"))
            weights = [data[f"{name}/W{i}"] for i in range(n_layers)]
            biases = [data[f"{name}/b{i}"] for i in range(n_layers)]
            nets[name] = Mlp(weights, biases, float(data[f"{name}/slope"]))
    return nets
