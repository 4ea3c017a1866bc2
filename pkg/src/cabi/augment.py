"""Synthetic-transition generation with bidirectional double checking.

Rollouts start from dataset states. A forward step imagines the next state,
then the backward ensemble reconstructs where that imagined state came from;
the L2 gap between the reconstruction and the true anchor is the candidate's
deviation score. Acceptance strategies either keep everything, keep the
smallest-deviation top k%, or use the ablation rules (random k%, smallest
ensemble variance, random-action rollouts).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cvae import CvaeModel, sample_action
from .data import Dataset
from .dynamics import Ensemble, ensemble_member_variance, predict

STRATEGIES = ("cabi", "bomi", "forward", "backward", "random",
              "ensemble-variance", "cabi-random")

# strategies whose acceptance rule consumes the keep percentage k
K_STRATEGIES = ("cabi", "random", "ensemble-variance", "cabi-random")


@dataclass
class RolloutConfig:
    fwd_horizon: int = 3
    bwd_horizon: int = 3
    k: float = 20.0
    batch_anchors: int = 1000
    total: int = 10_000
    # "sample" draws the backtracked state from the opposite ensemble, so the
    # deviation also carries that model's learned spread (large off-support);
    # "mean" checks against its mean prediction only
    check_mode: str = "sample"

    def __post_init__(self):
        if self.fwd_horizon < 0 or self.bwd_horizon < 0:
            raise ValueError("horizons must be >= 0")
        if not 0.0 <= self.k <= 100.0:
            raise ValueError("k must lie in [0, 100]")
        if self.batch_anchors <= 0:
            raise ValueError("batch_anchors must be positive")
        if self.check_mode not in ("sample", "mean"):
            raise ValueError("check_mode must be 'sample' or 'mean'")

    def as_dict(self):
        return {"fwd_horizon": self.fwd_horizon,
                "bwd_horizon": self.bwd_horizon, "k": self.k,
                "batch_anchors": self.batch_anchors, "total": self.total,
                "check_mode": self.check_mode}


@dataclass
class BidirectionalModels:
    forward: Ensemble
    backward: Ensemble


@dataclass
class RolloutPolicies:
    forward: object
    backward: object


class CvaePolicy:
    """Rollout-policy adapter over a trained CVAE."""

    def __init__(self, model: CvaeModel):
        self.model = model
        self.action_bound = model.action_bound

    def sample(self, condition, rng):
        return sample_action(self.model, condition, rng)


class RandomPolicy:
    """Uniform actions on [-bound, bound]; the CVAE-free ablation."""

    def __init__(self, action_dim, action_bound):
        self.action_dim = action_dim
        self.action_bound = np.broadcast_to(
            np.asarray(action_bound, dtype=np.float64), (action_dim,)).copy()

    def sample(self, condition, rng):
        n = np.atleast_2d(condition).shape[0]
        return rng.uniform(-1.0, 1.0, size=(n, self.action_dim)) \
            * self.action_bound


@dataclass
class CandidateBatch:
    """Synthetic transitions plus their double-check deviation scores."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    deviation: np.ndarray
    direction: str
    depth: int = 0

    def __len__(self):
        return len(self.r)

    def take(self, indices) -> "CandidateBatch":
        idx = np.asarray(indices)
        return CandidateBatch(s=self.s[idx], a=self.a[idx], r=self.r[idx],
                              s2=self.s2[idx], deviation=self.deviation[idx],
                              direction=self.direction, depth=self.depth)


@dataclass
class ModelBuffer:
    """Accepted synthetic transitions; done is always false (the models carry
    no termination knowledge)."""

    state_dim: int
    action_dim: int
    provenance: dict = field(default_factory=dict)
    s: np.ndarray = None
    a: np.ndarray = None
    r: np.ndarray = None
    s2: np.ndarray = None
    done: np.ndarray = None
    deviation: np.ndarray = None

    def __post_init__(self):
        if self.s is None:
            self.s = np.empty((0, self.state_dim), dtype=np.float32)
            self.a = np.empty((0, self.action_dim), dtype=np.float32)
            self.r = np.empty(0, dtype=np.float32)
            self.s2 = np.empty((0, self.state_dim), dtype=np.float32)
            self.done = np.empty(0, dtype=np.float32)
            self.deviation = np.empty(0, dtype=np.float32)

    @property
    def count(self) -> int:
        return len(self.r)

    def extend(self, batch: CandidateBatch) -> None:
        self.s = np.vstack([self.s, batch.s.astype(np.float32)])
        self.a = np.vstack([self.a, batch.a.astype(np.float32)])
        self.r = np.concatenate([self.r, batch.r.astype(np.float32)])
        self.s2 = np.vstack([self.s2, batch.s2.astype(np.float32)])
        self.done = np.concatenate(
            [self.done, np.zeros(len(batch), dtype=np.float32)])
        self.deviation = np.concatenate(
            [self.deviation, batch.deviation.astype(np.float32)])

    def truncate(self, n: int) -> None:
        self.s, self.a, self.r = self.s[:n], self.a[:n], self.r[:n]
        self.s2, self.done = self.s2[:n], self.done[:n]
        self.deviation = self.deviation[:n]

    def as_dataset(self, env: str) -> Dataset:
        return Dataset.from_arrays(env, self.s, self.a, self.r, self.s2,
                                   self.done)


def forward_step(states, fwd: Ensemble, bwd: Ensemble, policy, rng,
                 check_mode="sample") -> CandidateBatch:
    """One imagined forward transition per state, scored by tracing back.

    The forward ensemble samples (s_next, r); the backward ensemble traces
    (s_next, a) back to a reconstructed anchor, and the deviation is the L2
    distance between true and reconstructed anchor. A sampled reconstruction
    penalizes candidates exactly where the backward model is unsure.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(policy.sample(states, rng))
    next_states, rewards = predict(fwd, states, actions, "sample", rng)
    recon, _ = predict(bwd, next_states, actions, check_mode, rng)
    dev = np.linalg.norm(states - recon, axis=1)
    return CandidateBatch(s=states, a=actions, r=np.atleast_1d(rewards),
                          s2=next_states, deviation=dev, direction="forward")


def backward_step(next_states, fwd: Ensemble, bwd: Ensemble, policy, rng,
                  check_mode="sample") -> CandidateBatch:
    """Mirror of forward_step: imagine the previous state, check forward."""
    next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    actions = np.atleast_2d(policy.sample(next_states, rng))
    prev_states, rewards = predict(bwd, next_states, actions, "sample", rng)
    recon, _ = predict(fwd, prev_states, actions, check_mode, rng)
    dev = np.linalg.norm(next_states - recon, axis=1)
    return CandidateBatch(s=prev_states, a=actions, r=np.atleast_1d(rewards),
                          s2=next_states, deviation=dev, direction="backward")


def keep_count(k: float, n: int) -> int:
    if k <= 0.0:
        return 0
    return max(1, int(math.floor(k * n / 100.0 + 1e-9)))


def select_top_k(candidates: CandidateBatch, k: float) -> CandidateBatch:
    """Keep the k% smallest-deviation candidates, preserving batch order.

    Ties break toward the earlier batch index. k=0 keeps nothing, k=100
    keeps everything.
    """
    if len(candidates) == 0:
        raise ValueError("candidate batch is empty")
    kept = keep_count(k, len(candidates))
    order = np.argsort(candidates.deviation, kind="stable")[:kept]
    return candidates.take(np.sort(order))


def _select_random_k(candidates, k, rng):
    kept = keep_count(k, len(candidates))
    idx = rng.choice(len(candidates), size=kept, replace=False)
    return candidates.take(np.sort(idx))


def _select_smallest_variance(candidates, k, ensemble):
    if candidates.direction == "forward":
        var = ensemble_member_variance(ensemble, candidates.s, candidates.a)
    else:
        var = ensemble_member_variance(ensemble, candidates.s2, candidates.a)
    kept = keep_count(k, len(candidates))
    order = np.argsort(var, kind="stable")[:kept]
    return candidates.take(np.sort(order))


def _directions_for(strategy, config):
    dirs = []
    if strategy != "backward" and config.fwd_horizon > 0:
        dirs.append("forward")
    if strategy != "forward" and config.bwd_horizon > 0:
        dirs.append("backward")
    return dirs


def generate(dataset: Dataset, models: BidirectionalModels,
             policies: RolloutPolicies | None, config: RolloutConfig,
             strategy: str, rng) -> ModelBuffer:
    """Fill a model buffer with `config.total` accepted synthetic transitions.

    Each round samples anchor states (and next states) from the dataset,
    chains `fwd_horizon` forward and `bwd_horizon` backward imagination steps
    from them, and applies the strategy's acceptance rule per step and
    direction. Chaining always continues from the imagined state, whether or
    not it was accepted.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "forward" and config.fwd_horizon == 0 and config.total > 0:
        raise ValueError("forward strategy needs fwd_horizon >= 1")
    if strategy == "backward" and config.bwd_horizon == 0 and config.total > 0:
        raise ValueError("backward strategy needs bwd_horizon >= 1")
    if config.fwd_horizon == 0 and config.bwd_horizon == 0 and config.total > 0:
        raise ValueError("both horizons are zero but total > 0")
    for ens in (models.forward, models.backward):
        if not ens.trained:
            raise ValueError("both ensembles must be trained")

    provenance = {"strategy": strategy, "config": config.as_dict()}
    buffer = ModelBuffer(state_dim=dataset.state_dim,
                         action_dim=dataset.action_dim,
                         provenance=provenance)
    if config.total <= 0:
        return buffer
    # k=0 admits nothing: the buffer stays empty instead of looping forever
    if strategy in K_STRATEGIES and config.k <= 0.0:
        return buffer

    if strategy == "cabi-random":
        bound = np.max(np.abs(dataset.a), axis=0).astype(np.float64)
        pol_f = pol_b = RandomPolicy(dataset.action_dim, bound)
    else:
        if policies is None:
            raise ValueError(f"strategy {strategy!r} needs rollout policies")
        pol_f, pol_b = policies.forward, policies.backward

    def accept(cand: CandidateBatch) -> CandidateBatch:
        if strategy in ("cabi", "cabi-random"):
            return select_top_k(cand, config.k)
        if strategy == "random":
            return _select_random_k(cand, config.k, rng)
        if strategy == "ensemble-variance":
            ens = models.forward if cand.direction == "forward" \
                else models.backward
            return _select_smallest_variance(cand, config.k, ens)
        return cand  # bomi / forward / backward accept everything

    dirs = _directions_for(strategy, config)
    n = dataset.count
    while buffer.count < config.total:
        anchors_s = dataset.s.astype(np.float64)[
            rng.integers(0, n, size=config.batch_anchors)]
        anchors_s2 = dataset.s2.astype(np.float64)[
            rng.integers(0, n, size=config.batch_anchors)]
        if "forward" in dirs:
            cur = anchors_s
            for depth in range(config.fwd_horizon):
                cand = forward_step(cur, models.forward, models.backward,
                                    pol_f, rng, config.check_mode)
                cand.depth = depth
                buffer.extend(accept(cand))
                cur = cand.s2
        if "backward" in dirs:
            cur = anchors_s2
            for depth in range(config.bwd_horizon):
                cand = backward_step(cur, models.forward, models.backward,
                                     pol_b, rng, config.check_mode)
                cand.depth = depth
                buffer.extend(accept(cand))
                cur = cand.s
    buffer.truncate(config.total)
    return buffer
