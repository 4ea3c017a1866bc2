import numpy as np
import pytest

from cabi.data import Dataset, MixedSampler
from cabi.learner import (LearnerConfig, actor_loss_grads,
                          critic_loss_grads, critic_target, evaluate,
                          normalized_score, train_policy)
from cabi.nn import DenseNet, seeded_rng
from cabi.riskworld import RiskWorld
from conftest import grad_rel_error


def random_dataset(n, reward=None, done=0.0, seed=0):
    rng = seeded_rng(seed)
    s = rng.uniform(-1.5, 1.5, (n, 2))
    a = rng.uniform(-0.5, 0.5, (n, 2))
    r = np.full(n, reward) if reward is not None else rng.standard_normal(n)
    s2 = np.clip(s + a, -1.5, 1.5)
    return Dataset.from_arrays("t", s, a, r, s2, np.full(n, done))


SMALL = dict(steps=400, batch_size=64, hidden=(32, 32))


# -------------------------------------------------------- score mapping

def test_normalized_score_reference_endpoints():
    assert normalized_score(-280.18, -280.18, 12135.0) == 0.0
    assert normalized_score(12135.0, -280.18, 12135.0) == 100.0


def test_normalized_score_midpoint():
    assert abs(normalized_score(5927.41, -280.18, 12135.0) - 50.0) < 1e-9


def test_normalized_score_equal_refs_error():
    with pytest.raises(ValueError):
        normalized_score(1.0, 5.0, 5.0)


# ------------------------------------------------------- target algebra

def test_critic_target_uses_min_and_done_mask():
    r = np.array([1.0, 1.0])
    done = np.array([0.0, 1.0])
    q1 = np.array([10.0, 10.0])
    q2 = np.array([5.0, 20.0])
    t = critic_target(r, done, 0.9, q1, q2)
    assert t[0] == 1.0 + 0.9 * 5.0  # min of the twins
    assert t[1] == 1.0              # no bootstrap at terminal


# ---------------------------------------------------- gradient oracles

def test_critic_gradients_finite_difference():
    rng = seeded_rng(1)
    critic = DenseNet.build((4, 24, 24, 1), "relu", rng)
    x = rng.standard_normal((16, 4))
    target = rng.standard_normal(16)
    _, grads = critic_loss_grads(critic, x, target)

    def loss_only():
        q = critic.forward(x)[:, 0]
        return float(((q - target) ** 2).mean())

    rel = grad_rel_error(loss_only, critic.parameters(), grads, seeded_rng(2))
    assert rel < 1e-4


def test_actor_gradients_finite_difference():
    rng = seeded_rng(3)
    actor = DenseNet.build((2, 24, 24, 2), "relu", rng)
    critic = DenseNet.build((4, 24, 24, 1), "relu", rng)
    s = rng.standard_normal((16, 2))
    a_data = rng.uniform(-0.5, 0.5, (16, 2))
    bound = np.full(2, 0.5)
    # pin the Q-normalization weight so the objective is differentiable as
    # written (it is treated as a constant in the update)
    _, _, lam = actor_loss_grads(actor, critic, s, a_data, bound, 2.5)
    _, grads, _ = actor_loss_grads(actor, critic, s, a_data, bound, 2.5,
                                   lam=lam)

    def loss_only():
        a_pi = np.tanh(actor.forward(s)) * bound
        q = critic.forward(np.hstack([s, a_pi]))[:, 0]
        return float(-lam * q.mean() + ((a_pi - a_data) ** 2).mean())

    rel = grad_rel_error(loss_only, actor.parameters(), grads, seeded_rng(4))
    assert rel < 1e-4


# ------------------------------------------------------------- training

def test_zero_reward_dataset_critic_near_zero():
    ds = random_dataset(600, reward=0.0)
    cfg = LearnerConfig(steps=2000, batch_size=64, hidden=(32, 32))
    pol = train_policy(MixedSampler(ds, None, eta=1.0), cfg, seeded_rng(5))
    rng = seeded_rng(6)
    s = pol.stats.state.normalize(ds.s[:256].astype(float))
    a = ds.a[:256].astype(float)
    q = pol.critic1.forward(np.hstack([s, a]))[:, 0]
    assert np.abs(q).mean() < 0.1


def test_done_masks_bootstrap():
    # terminal-only dataset with unit reward: Q converges to 1, far from the
    # non-terminal fixed point 1/(1-gamma)
    ds = random_dataset(600, reward=1.0, done=1.0, seed=7)
    cfg = LearnerConfig(steps=3000, batch_size=64, hidden=(32, 32),
                        gamma=0.9)
    pol = train_policy(MixedSampler(ds, None, eta=1.0), cfg, seeded_rng(8))
    s = pol.stats.state.normalize(ds.s[:256].astype(float))
    q = pol.critic1.forward(np.hstack([s, ds.a[:256].astype(float)]))[:, 0]
    assert abs(q.mean() - 1.0) < 0.3
    assert q.mean() < 3.0


def test_eta_one_ignores_buffer():
    ds = random_dataset(300, seed=9)
    buf = random_dataset(300, seed=10)
    cfg = LearnerConfig(**SMALL)
    p1 = train_policy(MixedSampler(ds, buf, eta=1.0), cfg, seeded_rng(11))
    p2 = train_policy(MixedSampler(ds, None, eta=1.0), cfg, seeded_rng(11))
    for w1, w2 in zip(p1.actor.parameters(), p2.actor.parameters()):
        assert np.array_equal(w1, w2)


def test_training_reproducible_per_seed():
    ds = random_dataset(300, seed=12)
    cfg = LearnerConfig(**SMALL)
    p1 = train_policy(MixedSampler(ds, None, eta=1.0), cfg, seeded_rng(13))
    p2 = train_policy(MixedSampler(ds, None, eta=1.0), cfg, seeded_rng(13))
    for w1, w2 in zip(p1.actor.parameters() + p1.critic1.parameters(),
                      p2.actor.parameters() + p2.critic1.parameters()):
        assert np.array_equal(w1, w2)


def test_actor_respects_bounds():
    ds = random_dataset(300, seed=14)
    pol = train_policy(MixedSampler(ds, None, eta=1.0),
                       LearnerConfig(**SMALL), seeded_rng(15))
    rng = seeded_rng(16)
    acts = pol.select_action(rng.uniform(-1.5, 1.5, (200, 2)))
    assert np.all(np.abs(acts) <= pol.action_bound + 1e-12)


def test_config_eta_overrides_sampler():
    ds = random_dataset(300, seed=17)
    buf = random_dataset(300, seed=18)
    cfg = LearnerConfig(eta=1.0, **SMALL)
    p1 = train_policy(MixedSampler(ds, buf, eta=0.5), cfg, seeded_rng(19))
    p2 = train_policy(MixedSampler(ds, None, eta=1.0),
                      LearnerConfig(**SMALL), seeded_rng(19))
    for w1, w2 in zip(p1.actor.parameters(), p2.actor.parameters()):
        assert np.array_equal(w1, w2)


def test_divergence_raises_with_step_index():
    ds = random_dataset(200, seed=20)
    ds.r[:] = np.nan  # poisons the critic target immediately
    cfg = LearnerConfig(steps=10, batch_size=32, hidden=(16,))
    with pytest.raises(FloatingPointError, match="step 0"):
        train_policy(MixedSampler(ds, None, eta=1.0), cfg, seeded_rng(21))


def test_learner_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(gamma=1.0)
    with pytest.raises(ValueError):
        LearnerConfig(eta=-0.1)


# ------------------------------------------------------------ evaluation

class GoalSeeker:
    """Scripted oracle: reach the goal zone while skirting the danger disc
    (bottom lane first, then climb the right side)."""

    def select_action(self, state):
        x, y = state
        if x < 1.15 and y > -1.0:
            target = (x, -1.2)
        elif x < 1.15:
            target = (1.2, y)
        else:
            target = (1.2, 1.2)
        return np.clip(np.subtract(target, state), -0.5, 0.5)


class DangerSeeker:
    def select_action(self, state):
        return np.clip(-state, -0.5, 0.5)  # walk straight at the origin


def test_evaluate_goal_seeker_positive():
    res = evaluate(GoalSeeker(), RiskWorld(), 10, seeded_rng(22))
    assert res.mean > 0.0


def test_evaluate_danger_seeker_terminal_penalty():
    res = evaluate(DangerSeeker(), RiskWorld(), 10, seeded_rng(23))
    assert np.all(res.returns == -3.0)


def test_evaluate_seeded():
    r1 = evaluate(GoalSeeker(), RiskWorld(), 5, seeded_rng(24))
    r2 = evaluate(GoalSeeker(), RiskWorld(), 5, seeded_rng(24))
    assert np.array_equal(r1.returns, r2.returns)
    assert (r1.mean, r1.std) == (r2.mean, r2.std)


def test_evaluate_requires_episodes():
    with pytest.raises(ValueError):
        evaluate(GoalSeeker(), RiskWorld(), 0, seeded_rng(25))


def test_manifest_records_provenance():
    ds = random_dataset(100, seed=26)
    pol = train_policy(MixedSampler(ds, None, eta=1.0),
                       LearnerConfig(steps=10, batch_size=16, hidden=(8,)),
                       seeded_rng(27), seed=27)
    assert pol.manifest["seed"] == 27
    assert pol.manifest["eta"] == 1.0
    assert pol.manifest["real_data_hash"]
    assert pol.manifest["synthetic_data_hash"] is None
