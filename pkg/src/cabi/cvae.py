"""Conditional-VAE rollout policies.

The forward policy proposes an action given a state; the backward policy
proposes the action that led into a given next state. Both are trained to
reconstruct dataset actions plus a KL term against a standard-normal latent
prior, which keeps sampled actions inside the span of the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset, NormStats, norm_stats
from .dynamics import DIRECTIONS, identity_stats
from .nn import LOGVAR_MAX, LOGVAR_MIN, DenseNet

HIDDEN = (750, 750)
ACTIVATION = "relu"
LATENT_CLIP = 2.5

# Weight on the KL term of the ELBO. Unit weight posterior-collapses on
# near-uniform behavior data (the decoder then ignores the latent and emits
# one action per condition), which defeats the policy's purpose of proposing
# diverse in-support actions; 0.05 keeps the sampled spread close to the
# data's.
KL_WEIGHT = 0.05


@dataclass
class CvaeModel:
    encoder: DenseNet
    decoder: DenseNet
    direction: str
    latent_dim: int
    action_bound: np.ndarray
    stats: NormStats
    state_dim: int
    action_dim: int
    loss_history: list = field(default_factory=list)

    def condition_input(self, condition):
        cond = np.atleast_2d(np.asarray(condition, dtype=np.float64))
        return self.stats.state.normalize(cond)

    def decode(self, condition, z):
        """Deterministic decode: latent + condition -> bounded action."""
        cond_n = self.condition_input(condition)
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        raw = self.decoder.forward(np.hstack([cond_n, z]))
        return np.tanh(raw) * self.action_bound


def elbo_step(encoder: DenseNet, decoder: DenseNet, cond, act_raw, act_n,
              eps, bound, kl_weight):
    """Loss and exact gradients for one batch, with the latent noise given.

    Returns (loss, encoder grads, decoder grads). The latent is the
    reparametrized draw mu + exp(logvar/2) * eps.
    """
    b = len(cond)
    latent_dim = eps.shape[1]
    sd = cond.shape[1]
    enc_out, enc_cache = encoder.forward_full(np.hstack([cond, act_n]))
    mu = enc_out[:, :latent_dim]
    raw_lv = enc_out[:, latent_dim:]
    lv = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
    z = mu + np.exp(0.5 * lv) * eps

    dec_out, dec_cache = decoder.forward_full(np.hstack([cond, z]))
    tanh_out = np.tanh(dec_out)
    a_hat = tanh_out * bound

    diff = act_raw - a_hat
    recon = float((diff * diff).sum(axis=1).mean())
    kl = float(0.5 * (mu * mu + np.exp(lv) - lv - 1.0).sum(axis=1).mean())
    loss = recon + kl_weight * kl
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite CVAE loss")

    d_dec_out = (-2.0 * diff / b) * bound * (1.0 - tanh_out ** 2)
    dec_grads, d_dec_in = decoder.backward(dec_cache, d_dec_out)
    dz = d_dec_in[:, sd:]
    d_mu = dz + kl_weight * mu / b
    d_lv = dz * eps * 0.5 * np.exp(0.5 * lv) \
        + kl_weight * 0.5 * (np.exp(lv) - 1.0) / b
    d_lv *= (raw_lv > LOGVAR_MIN) & (raw_lv < LOGVAR_MAX)
    enc_grads, _ = encoder.backward(enc_cache, np.hstack([d_mu, d_lv]))
    return loss, enc_grads, dec_grads


def train_cvae(dataset: Dataset, direction: str, epochs: int, rng, *,
               latent_dim=None, hidden=HIDDEN, activation=ACTIVATION,
               batch_size=256, lr=1e-3, kl_weight=KL_WEIGHT,
               action_bound=None, normalize_inputs=True) -> CvaeModel:
    """Fit a rollout policy on (condition, action) pairs.

    The condition is the state for the forward direction and the next state
    for the backward direction. Loss = action reconstruction MSE + KL of the
    encoder posterior against N(0, I).
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if dataset.count == 0:
        raise ValueError("dataset must be non-empty")
    sd, ad = dataset.state_dim, dataset.action_dim
    if latent_dim is None:
        latent_dim = 2 * ad
    if action_bound is None:
        bound = np.max(np.abs(dataset.a), axis=0).astype(np.float64)
    else:
        bound = np.broadcast_to(np.asarray(action_bound, dtype=np.float64),
                                (ad,)).copy()
    stats = norm_stats(dataset) if normalize_inputs else identity_stats(sd, ad)

    cond_raw = dataset.s if direction == "forward" else dataset.s2
    cond = stats.state.normalize(cond_raw.astype(np.float64))
    act_raw = dataset.a.astype(np.float64)
    act_n = stats.action.normalize(act_raw)

    encoder = DenseNet.build((sd + ad,) + tuple(hidden) + (2 * latent_dim,),
                             activation, rng)
    decoder = DenseNet.build((sd + latent_dim,) + tuple(hidden) + (ad,),
                             activation, rng)
    params = encoder.parameters() + decoder.parameters()
    adam = nn.AdamState(params, lr=lr)
    n_enc = len(encoder.parameters())

    n = dataset.count
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for k in range(0, n, batch_size):
            idx = order[k:k + batch_size]
            eps = rng.standard_normal((len(idx), latent_dim))
            try:
                loss, enc_grads, dec_grads = elbo_step(
                    encoder, decoder, cond[idx], act_raw[idx], act_n[idx],
                    eps, bound, kl_weight)
            except FloatingPointError as e:
                raise FloatingPointError(f"{e} at epoch {epoch}") from e
            epoch_loss += loss * len(idx)
            nn.adam_step(params, enc_grads + dec_grads, adam)
        history.append(epoch_loss / n)

    return CvaeModel(encoder=encoder, decoder=decoder, direction=direction,
                     latent_dim=latent_dim, action_bound=bound, stats=stats,
                     state_dim=sd, action_dim=ad, loss_history=history)


def sample_action(model: CvaeModel, condition, rng):
    """Decode a truncated-normal latent into an in-bounds action."""
    single = np.asarray(condition).ndim == 1
    cond = np.atleast_2d(np.asarray(condition, dtype=np.float64))
    z = rng.standard_normal((cond.shape[0], model.latent_dim))
    z = np.clip(z, -LATENT_CLIP, LATENT_CLIP)
    actions = model.decode(cond, z)
    return actions[0] if single else actions
