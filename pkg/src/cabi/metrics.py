"""Model-quality diagnostics: one-step prediction error, forward/backward
disagreement along imagined trajectories, and region fractions of generated
buffers on the toy map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import riskworld
from .augment import BidirectionalModels, RolloutPolicies, keep_count
from .dynamics import Ensemble, elite_mean_prediction, predict


@dataclass
class DisagreementReport:
    forward: np.ndarray   # entry i-1 holds the horizon-i disagreement
    backward: np.ndarray

    @property
    def entries(self) -> int:
        return len(self.forward) + len(self.backward)


@dataclass
class SampleQualityReport:
    danger_fraction: float
    out_of_bounds_fraction: float
    count: int


def prediction_error(transitions, ensemble: Ensemble, direction: str) -> float:
    """Mean squared state error plus squared reward error against the
    ensemble's elite-mean prediction.

    Forward scores (s, a) -> (s', r); backward scores (s', a) -> (s, r).
    """
    s = np.atleast_2d(np.asarray(transitions.s, dtype=np.float64))
    a = np.atleast_2d(np.asarray(transitions.a, dtype=np.float64))
    r = np.asarray(transitions.r, dtype=np.float64).reshape(-1)
    s2 = np.atleast_2d(np.asarray(transitions.s2, dtype=np.float64))
    if len(r) == 0:
        raise ValueError("transition set is empty")
    if direction == "forward":
        pred_s, pred_r = elite_mean_prediction(ensemble, s, a)
        target_s = s2
    elif direction == "backward":
        pred_s, pred_r = elite_mean_prediction(ensemble, s2, a)
        target_s = s
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    err = ((target_s - pred_s) ** 2).sum(axis=1) + (r - pred_r) ** 2
    return float(err.mean())


def _chain_disagreement(anchor_states, anchor_rewards, gen: Ensemble,
                        recon: Ensemble, policy, horizon, rng, keep_fraction):
    """Roll `gen` for `horizon` steps; at each step trace the chain point
    back through `recon` and score the squared state and reward gaps."""
    values = np.empty(horizon)
    prev_s = np.asarray(anchor_states, dtype=np.float64)
    prev_r = np.asarray(anchor_rewards, dtype=np.float64).reshape(-1)
    cur = prev_s
    for i in range(horizon):
        actions = np.atleast_2d(policy.sample(cur, rng))
        nxt, nxt_r = predict(gen, cur, actions, "sample", rng)
        recon_s, recon_r = predict(recon, nxt, actions, "sample", rng)
        per_sample = ((recon_s - prev_s) ** 2).sum(axis=1) \
            + (recon_r - prev_r) ** 2
        if keep_fraction is None:
            values[i] = per_sample.mean()
        else:
            dev = np.linalg.norm(recon_s - prev_s, axis=1)
            kept = keep_count(100.0 * keep_fraction, len(dev))
            idx = np.argsort(dev, kind="stable")[:kept]
            values[i] = per_sample[idx].mean()
        prev_s, prev_r = nxt, nxt_r
        cur = nxt
    return values


def model_disagreement(anchors, models: BidirectionalModels,
                       policies: RolloutPolicies, horizon: int, rng,
                       keep_fraction: float | None = None
                       ) -> DisagreementReport:
    """Forward and backward disagreement for rollout depths 1..horizon.

    Depth 1 compares the round-trip reconstruction against the true anchor
    (state and dataset reward); deeper entries compare it against the
    previous imagined point. With `keep_fraction` set, each depth averages
    only over the smallest-state-deviation fraction of the batch (the
    double-check selection); None averages over everything.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = np.atleast_2d(np.asarray(anchors.s, dtype=np.float64))
    s2 = np.atleast_2d(np.asarray(anchors.s2, dtype=np.float64))
    r = np.asarray(anchors.r, dtype=np.float64).reshape(-1)
    fwd = _chain_disagreement(s, r, models.forward, models.backward,
                              policies.forward, horizon, rng, keep_fraction)
    bwd = _chain_disagreement(s2, r, models.backward, models.forward,
                              policies.backward, horizon, rng, keep_fraction)
    return DisagreementReport(forward=fwd, backward=bwd)


def region_fractions(buffer) -> SampleQualityReport:
    """Danger-zone and out-of-bounds fractions of a buffer's next states."""
    s2 = np.atleast_2d(np.asarray(buffer.s2, dtype=np.float64))
    if s2.shape[1] != 2:
        raise ValueError("region fractions are defined for 2-d states only")
    n = len(s2)
    if n == 0:
        raise ValueError("buffer is empty")
    return SampleQualityReport(
        danger_fraction=float(riskworld.in_danger(s2).mean()),
        out_of_bounds_fraction=float(riskworld.outside_legal(s2).mean()),
        count=n,
    )
