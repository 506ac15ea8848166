"""Fully connected ReLU network on coefficient vectors, with Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericalError, ValidationError


@dataclass(eq=False)
class CoeffNet:
    """``sizes`` = (input, hidden..., output); weights are stored (fan_in, fan_out)."""

    sizes: tuple
    weights: list
    biases: list
    seed: int | None = None
    trainable: list = None
    optimizer: object = field(default=None, repr=False)

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValidationError(f"invalid layer sizes {self.sizes}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValidationError("one weight matrix and bias per layer required")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValidationError(f"layer {i} has shapes {W.shape}, {b.shape}; sizes say {self.sizes[i:i + 2]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} parameters are not finite")
        if self.trainable is None:
            self.trainable = [True] * len(self.weights)

    @classmethod
    def init(cls, sizes, seed, dtype=np.float64):
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append((rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(tuple(sizes), weights, biases, seed)

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_layers(self):
        return len(self.weights)

    def astype(self, dtype):
        return CoeffNet(self.sizes, [W.astype(dtype) for W in self.weights],
                        [b.astype(dtype) for b in self.biases], self.seed, list(self.trainable))

    def same_parameters(self, other):
        """Bitwise equality of sizes and parameters."""
        return self.sizes == other.sizes and all(
            a.dtype == b.dtype and np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))

    def copy(self):
        return self.astype(self.dtype)

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def trainable_mask(self):
        return [t for t in self.trainable for _ in range(2)]

    def n_trainable(self):
        return sum(p.size for p, t in zip(self.parameters(), self.trainable_mask()) if t)

    def set_parameters(self, params):
        self.weights = list(params[0::2])
        self.biases = list(params[1::2])

    def forward(self, x):
        return forward(self, x)


def _check_input(net, x):
    if x.shape[-1] != net.sizes[0]:
        raise ValidationError(f"input width {x.shape[-1]} != network input size {net.sizes[0]}")


def forward(net, x):
    """Plain evaluation without recording a tape."""
    h = np.asarray(x, dtype=net.dtype)
    _check_input(net, h)
    last = net.n_layers - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if i < last:
            np.maximum(h, 0, out=h)
    return h


def param_tensors(net):
    """Leaf tensors for the parameters; frozen layers do not request gradients."""
    return [ad.Tensor(p, requires_grad=t) for p, t in zip(net.parameters(), net.trainable_mask())]


def forward_tensor(net, x, params):
    """Recorded evaluation using the leaf tensors ``params``."""
    h = x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=net.dtype))
    _check_input(net, h)
    last = net.n_layers - 1
    for i in range(net.n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < last:
            h = ad.relu(h)
    return h


def split_for_transfer(net):
    """Copy of ``net`` sharing the hidden stack, with only the output layer trainable.

    Returns ``(frozen, adapted)`` where ``frozen`` lists the hidden
    ``(W, b)`` pairs and ``adapted`` is the network to retrain.
    """
    if net.n_layers < 2:
        raise ValidationError("transfer needs at least one hidden layer")
    weights = list(net.weights[:-1]) + [net.weights[-1].copy()]
    biases = list(net.biases[:-1]) + [net.biases[-1].copy()]
    adapted = CoeffNet(net.sizes, weights, biases, net.seed, [False] * (net.n_layers - 1) + [True])
    return list(zip(net.weights[:-1], net.biases[:-1])), adapted


@dataclass
class AdamState:
    lr0: float = 1e-3
    decay: float = 0.25
    interval: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def lr(self, epoch):
        return self.lr0 * self.decay ** (epoch // self.interval)

    @classmethod
    def for_params(cls, params, **kw):
        s = cls(**kw)
        s.m = [np.zeros_like(p) for p in params]
        s.v = [np.zeros_like(p) for p in params]
        return s


def adam_step(params, grads, state, epoch=None, trainable=None):
    """One bias-corrected Adam update of ``params`` in place.

    ``grads`` entries may be None for frozen parameters, which are skipped.
    Returns the learning rate used.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValidationError("gradients, moments and parameters must align")
    for i, g in enumerate(grads):
        if g is None:
            continue
        if g.shape != params[i].shape:
            raise ValidationError(f"gradient {i} has shape {g.shape}, parameter {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {i}; update refused")
    epoch = state.step if epoch is None else epoch
    lr = state.lr(epoch)
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None or (trainable is not None and not trainable[i]):
            continue
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return lr
