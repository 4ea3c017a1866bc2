"""Minimal dense-network stack: MLP forward/backward, Gaussian losses, Adam.

Everything runs in float64. Networks are plain weight/bias lists with a fixed
feedforward structure; reverse-mode gradients are hand-coded for exactly that
structure (no general autodiff).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit as _sigmoid

LOG_2PI = math.log(2.0 * math.pi)

# Log-variance heads are clamped to this range before exponentiation to keep
# early-training NLL from collapsing or exploding.
LOGVAR_MIN = -10.0
LOGVAR_MAX = 5.0


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; identical seed gives an identical stream."""
    return np.random.default_rng(int(seed))


def _act_forward(name, z):
    """Apply an activation; returns (output, aux) with aux reused by the
    backward pass so expensive transcendentals are computed once."""
    if name == "swish":
        s = _sigmoid(z)
        return z * s, s
    if name == "relu":
        return np.maximum(z, 0.0), None
    if name == "tanh":
        t = np.tanh(z)
        return t, t
    if name == "identity":
        return z, None
    raise ValueError(f"unknown activation: {name!r}")


def _act_grad(name, z, aux):
    # derivative w.r.t. the pre-activation z
    if name == "swish":
        return aux * (1.0 + z * (1.0 - aux))
    if name == "relu":
        return z > 0.0
    if name == "tanh":
        return 1.0 - aux * aux
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation: {name!r}")


class DenseNet:
    """Fully-connected net: linear layers with an activation tag per hidden
    layer; the output layer is linear.

    `weights[i]` has shape (n_in_i, n_out_i) and consecutive widths chain.
    """

    def __init__(self, weights, biases, hidden_activations):
        if len(weights) != len(biases):
            raise ValueError("weights/biases length mismatch")
        if len(hidden_activations) != len(weights) - 1:
            raise ValueError("need one activation tag per hidden layer")
        for i in range(len(weights) - 1):
            if weights[i].shape[1] != weights[i + 1].shape[0]:
                raise ValueError("layer widths do not chain")
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape mismatch")
        self.weights = list(weights)
        self.biases = list(biases)
        self.activations = list(hidden_activations)

    @classmethod
    def build(cls, sizes, hidden_activation, rng):
        """Init with U(+-1/sqrt(fan_in)) weights and zero biases."""
        if isinstance(hidden_activation, str):
            acts = [hidden_activation] * (len(sizes) - 2)
        else:
            acts = list(hidden_activation)
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, acts)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        y, _ = self.forward_full(np.asarray(x, dtype=np.float64))
        return y

    def forward_full(self, x):
        """Forward pass keeping the caches needed by `backward`.

        Accepts a single vector or a (batch, dim) matrix.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.input_dim:
            raise ValueError(
                f"input width {h.shape[1]} != net input width {self.input_dim}"
            )
        inputs, preacts, auxes = [], [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w
            z += b
            if i < len(self.weights) - 1:
                preacts.append(z)
                h, aux = _act_forward(self.activations[i], z)
                auxes.append(aux)
            else:
                h = z
        y = h[0] if single else h
        return y, (inputs, preacts, auxes, single)

    def backward(self, cache, dy):
        """Backprop `dy` = dLoss/d(output) through the cached forward pass.

        Returns (grads, dx) where grads is a flat [dW0, db0, dW1, db1, ...]
        list matching `parameters()`.
        """
        inputs, preacts, auxes, single = cache
        g = np.asarray(dy, dtype=np.float64)
        if single:
            g = g[None, :]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = inputs[i].T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g *= _act_grad(self.activations[i - 1], preacts[i - 1],
                               auxes[i - 1])
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        dx = g[0] if single else g
        return grads, dx


def net_gradients(net, loss_head, inputs):
    """Exact reverse-mode gradients of a mean-batch loss over `net` params.

    `loss_head(outputs) -> (loss, dLoss/d_outputs)` must already average over
    the batch. Returns (loss, grads) with grads matching `net.parameters()`.
    """
    y, cache = net.forward_full(inputs)
    loss, dy = loss_head(y)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss: {loss}")
    grads, _ = net.backward(cache, dy)
    return float(loss), grads


def gaussian_nll(mean, logvar, target):
    """Diagonal-Gaussian negative log-likelihood of `target`.

    Sum over dimensions of (t-mu)^2 * e^-l / 2 + l/2 + ln(2*pi)/2.
    """
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (mean.shape == logvar.shape == target.shape):
        raise ValueError("mean/logvar/target shapes must match")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(logvar))
            and np.all(np.isfinite(target))):
        raise FloatingPointError("non-finite input to gaussian_nll")
    diff = target - mean
    return float(np.sum(0.5 * diff * diff * np.exp(-logvar)
                        + 0.5 * logvar + 0.5 * LOG_2PI))


def diag_gauss_kl(mu, logvar):
    """KL( N(mu, diag e^logvar) || N(0, I) ); always >= 0."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError("mu/logvar shapes must match")
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0))


def sample_diag_gaussian(mean, logvar, rng):
    """mean + exp(logvar/2) * z with z ~ N(0, I); reproducible per rng."""
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mean.shape != logvar.shape:
        raise ValueError("mean/logvar shapes must match")
    return mean + np.exp(0.5 * logvar) * rng.standard_normal(mean.shape)


class AdamState:
    """Per-parameter first/second moment accumulators plus the step counter."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied to `params` in place.

    In-place mutation is deliberate: callers may hold views into shared
    storage (stacked ensembles) that must observe the update.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    # folded form of lr * (m/bias1) / (sqrt(v/bias2) + eps)
    step = state.lr * math.sqrt(bias2) / bias1
    eps = state.eps * math.sqrt(bias2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v)
        denom += eps
        np.divide(m, denom, out=denom)
        denom *= step
        p -= denom
    return params, state
