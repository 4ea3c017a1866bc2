"""Probabilistic dynamics ensembles.

A forward model predicts (next state, reward) from (state, action); a
backward model predicts (previous state, reward) from (next state, action).
Each direction is a 7-member ensemble of diagonal-Gaussian MLPs trained on
bootstrap resamples; the 5 members with the best holdout NLL are the elites
used for prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset, NormStats, norm_stats
from .nn import LOGVAR_MAX, LOGVAR_MIN, DenseNet

DIRECTIONS = ("forward", "backward")

ENSEMBLE_SIZE = 7
N_ELITES = 5
HIDDEN = (400, 400, 400, 400)
ACTIVATION = "swish"


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")


def identity_stats(state_dim, action_dim) -> NormStats:
    d = state_dim + action_dim + 1
    return NormStats(mean=np.zeros(d), std=np.ones(d),
                     state_dim=state_dim, action_dim=action_dim)


@dataclass
class GaussianDynamicsModel:
    """One ensemble member: an MLP with a mean/log-variance head over the
    (state, reward) target."""

    net: DenseNet
    direction: str
    target_dim: int

    def predict_normalized(self, xn):
        out = self.net.forward(xn)
        mu = out[..., :self.target_dim]
        logvar = np.clip(out[..., self.target_dim:], LOGVAR_MIN, LOGVAR_MAX)
        return mu, logvar


@dataclass
class Ensemble:
    direction: str
    members: list
    elite_indices: np.ndarray
    holdout_losses: np.ndarray
    initial_holdout_losses: np.ndarray
    stats: NormStats
    state_dim: int
    action_dim: int

    @property
    def trained(self) -> bool:
        return len(self.elite_indices) > 0

    def model_input(self, state_like, action):
        """Normalize and concatenate a (state-like, action) pair."""
        state_like = np.atleast_2d(np.asarray(state_like, dtype=np.float64))
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        xs = self.stats.state.normalize(state_like)
        xa = self.stats.action.normalize(action)
        return np.hstack([xs, xa])

    def denorm_target(self, y):
        st = self.stats.state.concat(self.stats.reward)
        out = st.denormalize(y)
        return out[..., :self.state_dim], out[..., self.state_dim]


def select_elites(losses, n_elites=N_ELITES) -> np.ndarray:
    """Indices of the n smallest losses, ascending, ties by member order."""
    order = np.argsort(np.asarray(losses), kind="stable")
    return order[:n_elites]


class _StackedMlp:
    """All ensemble members trained at once via batched matmuls.

    Member nets hold views into the stacked weight arrays, so in-place Adam
    updates are visible to both representations.
    """

    def __init__(self, n_members, sizes, activation, rng):
        self.activation = activation
        self.W = []
        self.b = []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            self.W.append(rng.uniform(-bound, bound,
                                      size=(n_members, n_in, n_out)))
            self.b.append(np.zeros((n_members, 1, n_out)))

    def member_net(self, i) -> DenseNet:
        weights = [w[i] for w in self.W]
        biases = [b[i, 0] for b in self.b]
        return DenseNet(weights, biases, [self.activation] * (len(weights) - 1))

    def parameters(self):
        out = []
        for w, b in zip(self.W, self.b):
            out.append(w)
            out.append(b)
        return out

    def forward_full(self, x):
        """x: (E, B, d_in) or broadcastable (1, B, d_in)."""
        inputs, preacts, auxes = [], [], []
        h = x
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            inputs.append(h)
            z = np.matmul(h, w)
            z += b
            if i < last:
                preacts.append(z)
                h, aux = nn._act_forward(self.activation, z)
                auxes.append(aux)
            else:
                h = z
        return h, (inputs, preacts, auxes)

    def backward(self, cache, dy):
        inputs, preacts, auxes = cache
        g = dy
        grads = [None] * (2 * len(self.W))
        for i in range(len(self.W) - 1, -1, -1):
            grads[2 * i] = np.matmul(inputs[i].transpose(0, 2, 1), g)
            grads[2 * i + 1] = g.sum(axis=1, keepdims=True)
            if i > 0:
                g = np.matmul(g, self.W[i].transpose(0, 2, 1))
                g *= nn._act_grad(self.activation, preacts[i - 1],
                                  auxes[i - 1])
        return grads


def _nll_per_member(mu, logvar, target):
    """Mean-over-batch Gaussian NLL per member; inputs (E, B, K)."""
    diff = target - mu
    nll = 0.5 * diff * diff * np.exp(-logvar) + 0.5 * logvar + 0.5 * nn.LOG_2PI
    return nll.sum(axis=2).mean(axis=1)


def _training_arrays(dataset: Dataset, direction: str, stats: NormStats):
    s = stats.state.normalize(dataset.s.astype(np.float64))
    a = stats.action.normalize(dataset.a.astype(np.float64))
    s2 = stats.state.normalize(dataset.s2.astype(np.float64))
    r = stats.reward.normalize(dataset.r.astype(np.float64).reshape(-1, 1))
    if direction == "forward":
        x = np.hstack([s, a])
        y = np.hstack([s2, r])
    else:
        x = np.hstack([s2, a])
        y = np.hstack([s, r])
    return x, y


def _holdout_nll(stacked, x, y):
    out, _ = stacked.forward_full(x[None, :, :])
    k = y.shape[1]
    mu = out[..., :k]
    logvar = np.clip(out[..., k:], LOGVAR_MIN, LOGVAR_MAX)
    return _nll_per_member(mu, logvar, y[None, :, :])


def train_ensemble(train: Dataset, holdout: Dataset, direction: str,
                   epochs: int, rng, *, ensemble_size=ENSEMBLE_SIZE,
                   n_elites=N_ELITES, hidden=HIDDEN, activation=ACTIVATION,
                   batch_size=256, lr=1e-3, normalize_inputs=True) -> Ensemble:
    """Fit one direction's ensemble by minimizing Gaussian NLL.

    Members differ through bootstrap-resampled training sets and independent
    initialization; elites are the members with smallest holdout NLL.
    """
    _check_direction(direction)
    if train.count == 0 or holdout.count == 0:
        raise ValueError("train and holdout datasets must be non-empty")
    if epochs <= 0:
        raise ValueError("epochs must be positive")

    sd, ad = train.state_dim, train.action_dim
    stats = norm_stats(train) if normalize_inputs else identity_stats(sd, ad)
    x, y = _training_arrays(train, direction, stats)
    xh, yh = _training_arrays(holdout, direction, stats)
    target_dim = sd + 1
    sizes = (sd + ad,) + tuple(hidden) + (2 * target_dim,)

    stacked = _StackedMlp(ensemble_size, sizes, activation, rng)
    boot = rng.integers(0, train.count, size=(ensemble_size, train.count))
    adam = nn.AdamState(stacked.parameters(), lr=lr)

    initial_losses = _holdout_nll(stacked, xh, yh)

    n = train.count
    for epoch in range(epochs):
        order = np.stack([rng.permutation(n) for _ in range(ensemble_size)])
        epoch_idx = np.take_along_axis(boot, order, axis=1)
        for k in range(0, n, batch_size):
            idx = epoch_idx[:, k:k + batch_size]
            xb = x[idx]
            yb = y[idx]
            out, cache = stacked.forward_full(xb)
            mu = out[..., :target_dim]
            raw_lv = out[..., target_dim:]
            logvar = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
            losses = _nll_per_member(mu, logvar, yb)
            if not np.all(np.isfinite(losses)):
                bad = int(np.flatnonzero(~np.isfinite(losses))[0])
                raise FloatingPointError(
                    f"non-finite loss in member {bad} at epoch {epoch}")
            b = idx.shape[1]
            inv_var = np.exp(-logvar)
            dmu = (mu - yb) * inv_var / b
            dlv = (0.5 - 0.5 * (yb - mu) ** 2 * inv_var) / b
            dlv *= (raw_lv > LOGVAR_MIN) & (raw_lv < LOGVAR_MAX)
            dout = np.concatenate([dmu, dlv], axis=2)
            grads = stacked.backward(cache, dout)
            nn.adam_step(stacked.parameters(), grads, adam)

    final_losses = _holdout_nll(stacked, xh, yh)
    members = [GaussianDynamicsModel(net=stacked.member_net(i),
                                     direction=direction,
                                     target_dim=target_dim)
               for i in range(ensemble_size)]
    return Ensemble(direction=direction, members=members,
                    elite_indices=select_elites(final_losses, n_elites),
                    holdout_losses=final_losses,
                    initial_holdout_losses=initial_losses,
                    stats=stats, state_dim=sd, action_dim=ad)


def predict(ensemble: Ensemble, state_like, action, mode, rng):
    """Predict (state-like, reward) with one uniformly chosen elite.

    mode="sample" draws from that elite's Gaussian; mode="mean" returns its
    mean. Outputs are denormalized.
    """
    if not ensemble.trained:
        raise ValueError("ensemble has no elites; train it first")
    if mode not in ("sample", "mean"):
        raise ValueError("mode must be 'sample' or 'mean'")
    single = np.asarray(state_like).ndim == 1
    xn = ensemble.model_input(state_like, action)
    elite = ensemble.elite_indices[rng.integers(len(ensemble.elite_indices))]
    mu, logvar = ensemble.members[elite].predict_normalized(xn)
    y = nn.sample_diag_gaussian(mu, logvar, rng) if mode == "sample" else mu
    states, rewards = ensemble.denorm_target(y)
    if single:
        return states[0], float(rewards[0])
    return states, rewards


def elite_mean_prediction(ensemble: Ensemble, state_like, action):
    """Average of the elites' denormalized mean predictions (deterministic)."""
    if not ensemble.trained:
        raise ValueError("ensemble has no elites; train it first")
    xn = ensemble.model_input(state_like, action)
    means = []
    for i in ensemble.elite_indices:
        mu, _ = ensemble.members[i].predict_normalized(xn)
        means.append(mu)
    states, rewards = ensemble.denorm_target(np.mean(means, axis=0))
    return states, rewards


def ensemble_member_variance(ensemble: Ensemble, state_like, action):
    """Spread of the elite mean state predictions at an input: variance across
    elites, averaged over state dimensions. Vectorized over rows."""
    if not ensemble.trained:
        raise ValueError("ensemble has no elites; train it first")
    xn = ensemble.model_input(state_like, action)
    preds = []
    for i in ensemble.elite_indices:
        mu, _ = ensemble.members[i].predict_normalized(xn)
        states, _ = ensemble.denorm_target(mu)
        preds.append(states)
    stack = np.stack(preds)  # (n_elites, B, sd)
    return stack.var(axis=0).mean(axis=-1)
