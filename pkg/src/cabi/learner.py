"""Compact offline actor-critic learner on eta-mixed real/synthetic batches.

Twin critics with clipped target-policy smoothing, delayed actor updates, and
a behavior-cloning term on the actor loss keep the policy near the data while
the Q-term improves it. Purely numpy; training is bit-reproducible per seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import MixedSampler, mixed_batch, norm_stats
from .dynamics import identity_stats
from .nn import DenseNet


@dataclass
class LearnerConfig:
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    bc_alpha: float = 2.5
    steps: int = 100_000
    batch_size: int = 256
    eta: float | None = None  # overrides the sampler's ratio when set
    hidden: tuple = (256, 256)
    lr: float = 3e-4
    normalize_states: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.eta is not None and not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")

    def as_dict(self):
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class PolicyArtifact:
    actor: DenseNet
    critic1: DenseNet
    critic2: DenseNet
    action_bound: np.ndarray
    stats: object
    manifest: dict = field(default_factory=dict)

    def select_action(self, state):
        single = np.asarray(state).ndim == 1
        s = np.atleast_2d(np.asarray(state, dtype=np.float64))
        sn = self.stats.state.normalize(s)
        a = np.tanh(self.actor.forward(sn)) * self.action_bound
        return a[0] if single else a


@dataclass
class EvalResult:
    mean: float
    std: float
    returns: np.ndarray


def _copy_net(net: DenseNet) -> DenseNet:
    return DenseNet([w.copy() for w in net.weights],
                    [b.copy() for b in net.biases], list(net.activations))


def _polyak(target: DenseNet, online: DenseNet, tau: float) -> None:
    for pt, p in zip(target.parameters(), online.parameters()):
        pt *= 1.0 - tau
        pt += tau * p


def _array_hash(*arrays) -> str:
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def critic_target(reward, done, gamma, q1, q2):
    """Bellman target: min of the twin target critics, no bootstrap at
    terminal transitions."""
    return reward + gamma * (1.0 - done) * np.minimum(q1, q2)


def critic_loss_grads(critic: DenseNet, x, target):
    """MSE critic loss and its exact parameter gradients."""
    b = len(x)
    q, cache = critic.forward_full(x)
    diff = q[:, 0] - target
    loss = float((diff ** 2).mean())
    if not np.isfinite(loss):
        raise FloatingPointError("critic loss is not finite")
    grads, _ = critic.backward(cache, (2.0 * diff / b)[:, None])
    return loss, grads


def actor_loss_grads(actor: DenseNet, critic: DenseNet, s, a_data, bound,
                     bc_alpha, lam=None):
    """Q-maximizing + behavior-cloning actor loss and its gradients.

    lam is the Q-normalization weight; it is treated as a constant during
    differentiation (pass it explicitly to pin it, e.g. for gradient
    checks), and computed from the current batch when None.
    """
    b = len(s)
    pre, actor_cache = actor.forward_full(s)
    tanh_pre = np.tanh(pre)
    a_pi = tanh_pre * bound
    q, q_cache = critic.forward_full(np.hstack([s, a_pi]))
    if lam is None:
        lam = bc_alpha / (np.abs(q[:, 0]).mean() + 1e-8)
    bc_diff = a_pi - a_data
    loss = float(-lam * q[:, 0].mean() + (bc_diff ** 2).mean())
    if not np.isfinite(loss):
        raise FloatingPointError("actor loss is not finite")
    # value path flows through the critic input; BC path is direct
    _, dxq = critic.backward(q_cache, np.full((b, 1), -lam / b))
    d_a = dxq[:, s.shape[1]:] + 2.0 * bc_diff / bc_diff.size
    d_pre = d_a * bound * (1.0 - tanh_pre ** 2)
    grads, _ = actor.backward(actor_cache, d_pre)
    return loss, grads, lam


def train_policy(sampler: MixedSampler, config: LearnerConfig, rng,
                 seed=None) -> PolicyArtifact:
    """Run the actor-critic loop over eta-mixed batches.

    The critic target bootstraps min(Q1', Q2') at the smoothed target-policy
    action and is zeroed where done=1. The actor maximizes normalized Q plus
    a mean-squared behavior-cloning pull toward dataset actions.
    """
    if config.eta is not None:
        sampler = MixedSampler(real=sampler.real,
                               synthetic=sampler.synthetic, eta=config.eta)
    real = sampler.real
    sd, ad = real.state_dim, real.action_dim
    bound = np.max(np.abs(real.a), axis=0).astype(np.float64)
    stats = norm_stats(real) if config.normalize_states \
        else identity_stats(sd, ad)

    actor = DenseNet.build((sd,) + config.hidden + (ad,), "relu", rng)
    critic1 = DenseNet.build((sd + ad,) + config.hidden + (1,), "relu", rng)
    critic2 = DenseNet.build((sd + ad,) + config.hidden + (1,), "relu", rng)
    actor_t, critic1_t, critic2_t = map(_copy_net, (actor, critic1, critic2))
    adam_actor = nn.AdamState(actor.parameters(), lr=config.lr)
    adam_c1 = nn.AdamState(critic1.parameters(), lr=config.lr)
    adam_c2 = nn.AdamState(critic2.parameters(), lr=config.lr)

    noise_std = config.policy_noise * bound
    noise_max = config.noise_clip * bound

    for step in range(config.steps):
        batch = mixed_batch(sampler, config.batch_size, rng)
        b = config.batch_size
        s = stats.state.normalize(batch.s)
        s2 = stats.state.normalize(batch.s2)

        # critic update
        noise = np.clip(rng.normal(0.0, 1.0, size=(b, ad)) * noise_std,
                        -noise_max, noise_max)
        a2 = np.clip(np.tanh(actor_t.forward(s2)) * bound + noise,
                     -bound, bound)
        x2 = np.hstack([s2, a2])
        target = critic_target(batch.r, batch.done, config.gamma,
                               critic1_t.forward(x2)[:, 0],
                               critic2_t.forward(x2)[:, 0])
        x = np.hstack([s, batch.a])
        for critic, adam in ((critic1, adam_c1), (critic2, adam_c2)):
            try:
                _, grads = critic_loss_grads(critic, x, target)
            except FloatingPointError as e:
                raise FloatingPointError(f"{e} at step {step}") from e
            nn.adam_step(critic.parameters(), grads, adam)

        # delayed actor update + target smoothing
        if step % config.policy_delay == 0:
            try:
                _, grads, _ = actor_loss_grads(actor, critic1, s, batch.a,
                                               bound, config.bc_alpha)
            except FloatingPointError as e:
                raise FloatingPointError(f"{e} at step {step}") from e
            nn.adam_step(actor.parameters(), grads, adam_actor)
            _polyak(actor_t, actor, config.tau)
            _polyak(critic1_t, critic1, config.tau)
            _polyak(critic2_t, critic2, config.tau)

    manifest = {
        "config": config.as_dict(),
        "seed": seed,
        "eta": sampler.eta,
        "real_data_hash": _array_hash(real.s, real.a, real.r, real.s2,
                                      real.done),
        "synthetic_data_hash": None if sampler.synthetic is None
        or sampler.synthetic.count == 0
        else _array_hash(sampler.synthetic.s, sampler.synthetic.a,
                         sampler.synthetic.r, sampler.synthetic.s2),
    }
    return PolicyArtifact(actor=actor, critic1=critic1, critic2=critic2,
                          action_bound=bound, stats=stats, manifest=manifest)


def evaluate(policy: PolicyArtifact, env, episodes: int, rng) -> EvalResult:
    """Seeded deterministic-actor rollouts; undiscounted per-episode return."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = np.empty(episodes)
    for ep in range(episodes):
        state = env.reset(rng)
        total = 0.0
        for _ in range(env.episode_limit):
            action = policy.select_action(state)
            res = env.step(state, action)
            total += res.reward
            state = res.state
            if res.done:
                break
        returns[ep] = total
    return EvalResult(mean=float(returns.mean()), std=float(returns.std()),
                      returns=returns)


def normalized_score(score: float, ref_min: float, ref_max: float) -> float:
    """Rescale a raw return so ref_min maps to 0 and ref_max maps to 100."""
    if ref_max == ref_min:
        raise ValueError("reference scores must differ")
    return (score - ref_min) / (ref_max - ref_min) * 100.0
