"""Minimal dense-network kernel: temperature softmax, divergence losses,
MLP and tanh-RNN forward/backward passes, and momentum SGD.

Everything runs in float64 so finite-difference gradient checks hold to
tight tolerances. There is no autograd: each model exposes an explicit
backward pass over cached activations, and optimizers operate on flat
lists of parameter arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _maybe_scalar(x: np.ndarray):
    return float(x) if x.ndim == 0 else x


def sigmoid(x):
    """Numerically stable logistic function for scalars or arrays."""
    x = _as_array(x)
    shrink = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + shrink), shrink / (1.0 + shrink))
    return _maybe_scalar(out)


def softmax_with_temperature(logits, temperature) -> np.ndarray:
    """Softmax of ``logits / temperature`` along the last axis.

    ``temperature`` is a positive scalar, or a vector with one entry per
    row when ``logits`` is 2-D (per-instance temperatures).
    """
    z = _as_array(logits)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax requires finite logits")
    t = _as_array(temperature)
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise ValueError(f"temperature must be positive and finite, got {temperature!r}")
    if t.ndim == 1:
        if z.ndim != 2 or z.shape[0] != t.shape[0]:
            raise ValueError("per-row temperatures need one entry per logit row")
        scaled = z / t[:, None]
    else:
        scaled = z / t
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    ez = np.exp(scaled)
    return ez / ez.sum(axis=-1, keepdims=True)


def kl_divergence(p, q):
    """KL(p || q) = sum p * log(p / q), with 0*log0 = 0 and q floored at 1e-12."""
    p = _as_array(p)
    q = _as_array(q)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    qc = np.maximum(q, LOG_FLOOR)
    terms = np.where(p > 0, p * (np.log(np.maximum(p, LOG_FLOOR)) - np.log(qc)), 0.0)
    return _maybe_scalar(terms.sum(axis=-1))


def prediction_entropy(p):
    """Shannon entropy -sum p*log(p) in nats, with 0*log0 = 0."""
    p = _as_array(p)
    terms = np.where(p > 0, -p * np.log(np.maximum(p, LOG_FLOOR)), 0.0)
    return _maybe_scalar(terms.sum(axis=-1))


def cross_entropy(target, predicted):
    """-sum target * log(predicted), with the prediction floored at 1e-12."""
    t = _as_array(target)
    q = _as_array(predicted)
    if t.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {t.shape} vs {q.shape}")
    terms = -t * np.log(np.maximum(q, LOG_FLOOR))
    return _maybe_scalar(terms.sum(axis=-1))


def all_finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


@dataclass
class MlpCache:
    activations: list  # layer inputs, a[0] is the network input
    pre: list          # pre-activation values per layer
    squeeze: bool      # input was a single vector


class Mlp:
    """Fully connected network: rectifier hidden layers, identity output.

    Weights are stored as ``[out, in]`` matrices. ``forward`` accepts a
    single feature vector or a ``[n, in]`` batch (rows are instances).
    """

    def __init__(self, layer_sizes, rng: np.random.Generator, *, final_scale: float = 1.0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        self.layer_sizes = list(layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(layer_sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            scale = math.sqrt(2.0 / fan_in)
            if i == last:
                scale = final_scale * math.sqrt(1.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def from_params(cls, weights, biases) -> "Mlp":
        model = cls.__new__(cls)
        model.weights = [np.array(w, dtype=np.float64) for w in weights]
        model.biases = [np.array(b, dtype=np.float64) for b in biases]
        sizes = [model.weights[0].shape[1]] + [w.shape[0] for w in model.weights]
        for w_next, w in zip(model.weights[1:], model.weights[:-1]):
            if w_next.shape[1] != w.shape[0]:
                raise ValueError("consecutive layer shapes are incompatible")
        model.layer_sizes = sizes
        return model

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params())

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp.from_params(self.weights, self.biases)

    def forward(self, x) -> np.ndarray:
        out, _ = self.forward_with_cache(x)
        return out

    def forward_with_cache(self, x):
        a = _as_array(x)
        squeeze = a.ndim == 1
        a = np.atleast_2d(a)
        if a.shape[1] != self.input_size:
            raise ValueError(f"input size {a.shape[1]} does not match first layer {self.input_size}")
        activations = [a]
        pre = []
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pre.append(z)
            a = np.maximum(z, 0.0) if i < n_layers - 1 else z
            activations.append(a)
        out = activations[-1][0] if squeeze else activations[-1]
        return out, MlpCache(activations, pre, squeeze)

    def backward(self, cache: MlpCache, output_gradient):
        """Backpropagate an output gradient.

        Returns ``(grads, dinput)`` where ``grads`` matches ``params()``
        order and ``dinput`` is the gradient w.r.t. the network input.
        """
        dz = np.atleast_2d(_as_array(output_gradient))
        if dz.shape != cache.pre[-1].shape:
            raise ValueError(f"output gradient shape {dz.shape} does not match logits {cache.pre[-1].shape}")
        grads: list[np.ndarray | None] = [None] * (2 * len(self.weights))
        dinput = None
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = cache.activations[i]
            grads[2 * i] = dz.T @ a_prev
            grads[2 * i + 1] = dz.sum(axis=0)
            da = dz @ self.weights[i]
            if i > 0:
                # rectifier subgradient at 0 is defined as 0
                dz = da * (cache.pre[i - 1] > 0)
            else:
                dinput = da
        if cache.squeeze:
            dinput = dinput[0]
        return grads, dinput


@dataclass
class RnnCache:
    inputs: np.ndarray   # [B, T, in]
    hidden: np.ndarray   # [B, T, h] post-tanh states


class Rnn:
    """Single tanh recurrent layer with a linear scalar output head.

    The head reads the hidden state plus a direct feedthrough of the
    current input, so purely input-driven output components do not have
    to route through the recurrence.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_in = rng.normal(0.0, math.sqrt(1.0 / input_size), size=(hidden_size, input_size))
        self.w_rec = rng.normal(0.0, math.sqrt(1.0 / hidden_size), size=(hidden_size, hidden_size))
        self.b_h = np.zeros(hidden_size)
        self.w_out = rng.normal(0.0, math.sqrt(1.0 / hidden_size), size=hidden_size)
        self.w_skip = np.zeros(input_size)
        self.b_out = np.zeros(1)

    def params(self) -> list[np.ndarray]:
        return [self.w_in, self.w_rec, self.b_h, self.w_out, self.w_skip, self.b_out]

    def copy(self) -> "Rnn":
        dup = Rnn.__new__(Rnn)
        dup.input_size = self.input_size
        dup.hidden_size = self.hidden_size
        dup.w_in = self.w_in.copy()
        dup.w_rec = self.w_rec.copy()
        dup.b_h = self.b_h.copy()
        dup.w_out = self.w_out.copy()
        dup.w_skip = self.w_skip.copy()
        dup.b_out = self.b_out.copy()
        return dup

    def forward(self, seqs) -> np.ndarray:
        out, _ = self.forward_with_cache(seqs)
        return out

    def forward_with_cache(self, seqs):
        """Run sequences ``[B, T, in]`` to per-step scalar outputs ``[B, T]``."""
        x = _as_array(seqs)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ValueError(f"expected [batch, steps, {self.input_size}] input, got {x.shape}")
        n, steps = x.shape[0], x.shape[1]
        hidden = np.zeros((n, steps, self.hidden_size))
        h = np.zeros((n, self.hidden_size))
        out = np.zeros((n, steps))
        for t in range(steps):
            h = np.tanh(x[:, t, :] @ self.w_in.T + h @ self.w_rec.T + self.b_h)
            hidden[:, t, :] = h
            out[:, t] = h @ self.w_out + x[:, t, :] @ self.w_skip + self.b_out[0]
        return out, RnnCache(x, hidden)

    def backward(self, cache: RnnCache, output_gradient):
        """Backpropagate per-step output gradients ``[B, T]`` through time."""
        dout = _as_array(output_gradient)
        x, hidden = cache.inputs, cache.hidden
        if dout.shape != (x.shape[0], x.shape[1]):
            raise ValueError(f"output gradient shape {dout.shape} does not match {(x.shape[0], x.shape[1])}")
        steps = x.shape[1]
        g_w_in = np.zeros_like(self.w_in)
        g_w_rec = np.zeros_like(self.w_rec)
        g_b_h = np.zeros_like(self.b_h)
        g_w_out = np.zeros_like(self.w_out)
        g_w_skip = np.zeros_like(self.w_skip)
        g_b_out = np.zeros_like(self.b_out)
        dh_carry = np.zeros((x.shape[0], self.hidden_size))
        for t in range(steps - 1, -1, -1):
            h = hidden[:, t, :]
            g_w_out += dout[:, t] @ h
            g_w_skip += dout[:, t] @ x[:, t, :]
            g_b_out[0] += dout[:, t].sum()
            dh = dout[:, t][:, None] * self.w_out[None, :] + dh_carry
            dz = dh * (1.0 - h * h)
            g_w_in += dz.T @ x[:, t, :]
            h_prev = hidden[:, t - 1, :] if t > 0 else np.zeros_like(h)
            g_w_rec += dz.T @ h_prev
            g_b_h += dz.sum(axis=0)
            dh_carry = dz @ self.w_rec
        return [g_w_in, g_w_rec, g_b_h, g_w_out, g_w_skip, g_b_out]


class SgdMomentum:
    """Momentum SGD over a list of parameter arrays.

    ``step`` mutates the parameters in place and skips (returning False)
    whenever any gradient entry is non-finite, leaving the velocity state
    untouched so one bad batch cannot poison the run. ``max_grad_norm``
    rescales the global gradient norm before the update; recurrent models
    need it to survive occasional curvature spikes.
    """

    def __init__(self, params, lr: float, momentum: float = 0.9, *, max_grad_norm: float | None = None):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.max_grad_norm = max_grad_norm
        self.velocity = [np.zeros_like(p) for p in params]
        self.skipped = 0

    def step(self, params, grads) -> bool:
        if len(params) != len(self.velocity) or len(grads) != len(self.velocity):
            raise ValueError("parameter/gradient lists do not match optimizer state")
        if not all_finite(grads):
            self.skipped += 1
            return False
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v += scale * g
            p -= self.lr * v
        return True

    def copy(self) -> "SgdMomentum":
        dup = SgdMomentum.__new__(SgdMomentum)
        dup.lr = self.lr
        dup.momentum = self.momentum
        dup.max_grad_norm = self.max_grad_norm
        dup.velocity = [v.copy() for v in self.velocity]
        dup.skipped = self.skipped
        return dup
