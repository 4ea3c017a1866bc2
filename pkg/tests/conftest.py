import numpy as np
import pytest

from cabi import nn
from cabi.augment import BidirectionalModels, CvaePolicy, RolloutPolicies
from cabi.data import NormStats, split_holdout
from cabi.cvae import train_cvae
from cabi.dynamics import Ensemble, GaussianDynamicsModel, train_ensemble
from cabi.nn import DenseNet
from cabi.riskworld import collect_random


def fd_gradient(loss_fn, param, coords, h=1e-6):
    """Central finite differences of loss_fn at the given flat coordinates of
    one parameter array (mutates and restores in place)."""
    flat = param.reshape(-1)
    out = np.empty(len(coords))
    for j, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        up = loss_fn()
        flat[c] = orig - h
        down = loss_fn()
        flat[c] = orig
        out[j] = (up - down) / (2.0 * h)
    return out


def grad_rel_error(loss_fn, params, grads, rng, coords_per_tensor=20):
    """Norm-based relative error between analytic and finite-difference
    gradients over sampled coordinates of every parameter tensor."""
    analytic, numeric = [], []
    for p, g in zip(params, grads):
        n = p.size
        take = min(coords_per_tensor, n)
        coords = rng.choice(n, size=take, replace=False)
        analytic.append(g.reshape(-1)[coords])
        numeric.append(fd_gradient(loss_fn, p, coords))
    ga = np.concatenate(analytic)
    gf = np.concatenate(numeric)
    denom = max(np.linalg.norm(ga), np.linalg.norm(gf), 1e-12)
    return np.linalg.norm(ga - gf) / denom


def affine_dynamics_model(state_dim, action_dim, state_matrix, action_matrix,
                          offset, reward_vec=None, logvar=-10.0):
    """Exact affine Gaussian model: mean_state = S s + A a + c, mean_reward =
    w.[s a], with the log-variance pinned at `logvar` (clamp floor by
    default, so samples sit essentially on the mean)."""
    sd, ad = state_dim, action_dim
    target_dim = sd + 1
    w = np.zeros((sd + ad, 2 * target_dim))
    w[:sd, :sd] = np.asarray(state_matrix, dtype=float).T
    w[sd:, :sd] = np.asarray(action_matrix, dtype=float).T
    if reward_vec is not None:
        w[:, sd] = np.asarray(reward_vec, dtype=float)
    b = np.zeros(2 * target_dim)
    b[:sd] = np.asarray(offset, dtype=float)
    b[target_dim:] = logvar
    net = DenseNet([w], [b], [])
    return net


def affine_ensemble(direction, state_dim, action_dim, state_matrix,
                    action_matrix, offset, reward_vec=None, logvar=-10.0,
                    n_members=7, n_elites=5):
    """Ensemble of identical affine members with identity normalization."""
    sd, ad = state_dim, action_dim
    members = []
    for _ in range(n_members):
        net = affine_dynamics_model(sd, ad, state_matrix, action_matrix,
                                    offset, reward_vec, logvar)
        members.append(GaussianDynamicsModel(net=net, direction=direction,
                                             target_dim=sd + 1))
    stats = NormStats(mean=np.zeros(sd + ad + 1), std=np.ones(sd + ad + 1),
                      state_dim=sd, action_dim=ad)
    losses = np.zeros(n_members)
    return Ensemble(direction=direction, members=members,
                    elite_indices=np.arange(n_elites),
                    holdout_losses=losses, initial_holdout_losses=losses,
                    stats=stats, state_dim=sd, action_dim=ad)


class FixedActionPolicy:
    def __init__(self, action):
        self.action = np.atleast_1d(np.asarray(action, dtype=float))

    def sample(self, condition, rng):
        n = np.atleast_2d(condition).shape[0]
        return np.tile(self.action, (n, 1))


@pytest.fixture(scope="session")
def tiny_riskworld():
    """Small dataset plus small-architecture trained models, shared across
    tests that need something trained but not accurate."""
    rng = nn.seeded_rng(123)
    ds = collect_random(1500, rng)
    train, hold = split_holdout(ds, 150, nn.seeded_rng(1))
    kw = dict(hidden=(48, 48), batch_size=128)
    fwd = train_ensemble(train, hold, "forward", epochs=25,
                         rng=nn.seeded_rng(2), **kw)
    bwd = train_ensemble(train, hold, "backward", epochs=25,
                         rng=nn.seeded_rng(3), **kw)
    fcv = train_cvae(train, "forward", epochs=20, rng=nn.seeded_rng(4),
                     hidden=(48, 48), batch_size=128)
    bcv = train_cvae(train, "backward", epochs=20, rng=nn.seeded_rng(5),
                     hidden=(48, 48), batch_size=128)
    return {
        "dataset": ds,
        "train": train,
        "holdout": hold,
        "models": BidirectionalModels(forward=fwd, backward=bwd),
        "policies": RolloutPolicies(forward=CvaePolicy(fcv),
                                    backward=CvaePolicy(bcv)),
        "fwd_cvae": fcv,
        "bwd_cvae": bcv,
    }
