import math

import numpy as np
import pytest

from cabi import nn
from cabi.nn import (AdamState, DenseNet, adam_step, diag_gauss_kl,
                     gaussian_nll, net_gradients, sample_diag_gaussian,
                     seeded_rng)
from conftest import grad_rel_error


def test_swish_values():
    h, _ = nn._act_forward("swish", np.array([0.0]))
    assert h[0] == 0.0
    h, _ = nn._act_forward("swish", np.array([1.0]))
    assert abs(h[0] - 0.73106) < 1e-5


def test_identity_layer_passthrough():
    net = DenseNet([np.eye(3)], [np.zeros(3)], [])
    v = np.array([0.3, -1.2, 7.0])
    assert np.allclose(net.forward(v), v)


def test_forward_width_mismatch():
    net = DenseNet([np.eye(3)], [np.zeros(3)], [])
    with pytest.raises(ValueError, match="width"):
        net.forward(np.zeros(4))


def test_forward_batch_matches_rows():
    rng = seeded_rng(0)
    net = DenseNet.build((4, 8, 3), "swish", rng)
    x = rng.standard_normal((5, 4))
    batched = net.forward(x)
    rows = np.stack([net.forward(x[i]) for i in range(5)])
    assert np.allclose(batched, rows)


def test_bad_activation_rejected():
    with pytest.raises(ValueError):
        nn._act_forward("selu", np.zeros(1))


# ------------------------------------------------------------ gaussian nll

def test_nll_at_mean():
    v = gaussian_nll(np.zeros(1), np.zeros(1), np.zeros(1))
    assert abs(v - 0.91894) < 1e-5  # 0.5*ln(2*pi)


def test_nll_unit_residual():
    v = gaussian_nll(np.zeros(1), np.zeros(1), np.ones(1))
    assert abs(v - 1.41894) < 1e-5


def test_nll_matches_scalar_oracle():
    rng = seeded_rng(4)
    mean = rng.standard_normal(5)
    logvar = rng.uniform(-2, 2, 5)
    target = rng.standard_normal(5)
    # independent scalar-by-scalar evaluation
    expected = 0.0
    for m, l, t in zip(mean, logvar, target):
        var = math.exp(l)
        expected += (t - m) ** 2 / (2 * var) + 0.5 * l \
            + 0.5 * math.log(2 * math.pi)
    assert abs(gaussian_nll(mean, logvar, target) - expected) < 1e-12


def test_nll_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        gaussian_nll(np.array([np.nan]), np.zeros(1), np.zeros(1))


def test_nll_minimized_at_target():
    # gradient w.r.t. the mean vanishes when mean == target
    rng = seeded_rng(5)
    target = rng.standard_normal(4)
    logvar = rng.uniform(-1, 1, 4)
    base = gaussian_nll(target, logvar, target)
    for eps in (1e-3, -1e-3):
        shifted = gaussian_nll(target + eps, logvar, target)
        assert shifted >= base


# ------------------------------------------------------------------- KL

def test_kl_zero_at_standard_normal():
    assert diag_gauss_kl(np.zeros(3), np.zeros(3)) == 0.0


def test_kl_closed_form_unit_mean():
    assert abs(diag_gauss_kl(np.ones(1), np.zeros(1)) - 0.5) < 1e-12


def test_kl_monte_carlo_oracle():
    mu = np.array([0.3, -0.2])
    logvar = np.array([0.1, -0.1])
    rng = seeded_rng(77)
    n = 100_000
    z = mu + np.exp(0.5 * logvar) * rng.standard_normal((n, 2))
    log_q = -0.5 * (np.log(2 * np.pi) + logvar
                    + (z - mu) ** 2 * np.exp(-logvar))
    log_p = -0.5 * (np.log(2 * np.pi) + z ** 2)
    mc = (log_q - log_p).sum(axis=1).mean()
    assert abs(diag_gauss_kl(mu, logvar) - mc) < 5e-3


def test_kl_nonnegative_random():
    rng = seeded_rng(6)
    for _ in range(200):
        d = rng.integers(1, 6)
        mu = rng.standard_normal(d)
        lv = rng.uniform(-3, 3, d)
        assert diag_gauss_kl(mu, lv) >= 0.0
    assert diag_gauss_kl(np.zeros(2), np.zeros(2)) == 0.0
    assert diag_gauss_kl(np.array([1e-3, 0]), np.zeros(2)) > 0.0


# -------------------------------------------------------------- gradients

def test_constant_loss_zero_gradients():
    rng = seeded_rng(7)
    net = DenseNet.build((3, 5, 2), "tanh", rng)
    loss, grads = net_gradients(net, lambda y: (1.0, np.zeros_like(y)),
                                rng.standard_normal((4, 3)))
    assert all(np.all(g == 0) for g in grads)


def test_scalar_linear_model_analytic_gradient():
    # f(x) = w*x, squared loss (w*x - y)^2 -> dL/dw = 2*(w*x - y)*x
    w = 1.7
    x, y = 0.9, -0.4
    net = DenseNet([np.array([[w]])], [np.zeros(1)], [])

    def head(out):
        diff = out[0, 0] - y
        d = np.zeros_like(out)
        d[0, 0] = 2 * diff
        return diff ** 2, d

    _, grads = net_gradients(net, head, np.array([[x]]))
    assert abs(grads[0][0, 0] - 2 * (w * x - y) * x) < 1e-12


@pytest.mark.parametrize("activation", ["swish", "tanh", "relu"])
def test_finite_difference_gradients(activation):
    rng = seeded_rng(8)
    net = DenseNet.build((4, 16, 16, 3), activation, rng)
    x = rng.standard_normal((12, 4))
    target = rng.standard_normal((12, 3))

    def head(y):
        diff = y - target
        return float((diff ** 2).mean()), 2 * diff / diff.size

    def loss_only():
        loss, _ = head(net.forward(x))
        return loss

    _, grads = net_gradients(net, head, x)
    rel = grad_rel_error(loss_only, net.parameters(), grads, seeded_rng(9))
    assert rel < 1e-4


def test_gradients_reject_non_finite_loss():
    rng = seeded_rng(10)
    net = DenseNet.build((2, 4, 1), "relu", rng)
    with pytest.raises(FloatingPointError):
        net_gradients(net, lambda y: (float("nan"), np.zeros_like(y)),
                      rng.standard_normal((3, 2)))


# ------------------------------------------------------------------ adam

def test_adam_zero_gradient_no_change():
    rng = seeded_rng(11)
    p = rng.standard_normal(5)
    before = p.copy()
    state = AdamState([p], lr=0.1)
    adam_step([p], [np.zeros(5)], state)
    assert np.array_equal(p, before)
    assert state.t == 1


def test_adam_descends_quadratic():
    w = np.array([1.0])
    state = AdamState([w], lr=0.1)
    adam_step([w], [2 * w], state)
    assert w[0] < 1.0


def test_adam_converges_quadratic():
    w = np.array([1.0])
    state = AdamState([w], lr=0.1)
    for _ in range(200):
        adam_step([w], [2 * w], state)
    assert abs(w[0]) < 1e-2


def test_adam_shape_mismatch():
    w = np.zeros(3)
    state = AdamState([w], lr=0.1)
    with pytest.raises(ValueError):
        adam_step([w], [np.zeros(4)], state)


def test_adam_updates_views_in_place():
    # ensemble training relies on updates being visible through views
    stack = np.ones((2, 3))
    view = stack[0]
    state = AdamState([view], lr=0.5)
    adam_step([view], [np.ones(3)], state)
    assert np.all(stack[0] != 1.0)
    assert np.all(stack[1] == 1.0)


# -------------------------------------------------------------- sampling

def test_sample_clamped_floor_near_mean():
    mean = np.array([2.0, -1.0])
    out = sample_diag_gaussian(mean, np.full(2, nn.LOGVAR_MIN), seeded_rng(1))
    assert np.allclose(out, mean, atol=0.05)


def test_sample_deterministic_per_seed():
    mean, lv = np.zeros(3), np.zeros(3)
    a = sample_diag_gaussian(mean, lv, seeded_rng(42))
    b = sample_diag_gaussian(mean, lv, seeded_rng(42))
    assert np.array_equal(a, b)


def test_sample_law_of_large_numbers():
    rng = seeded_rng(12)
    draws = sample_diag_gaussian(np.zeros(100_000), np.zeros(100_000), rng)
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.05


def test_seeded_rng_identical_streams():
    a = seeded_rng(9).standard_normal(10)
    b = seeded_rng(9).standard_normal(10)
    assert np.array_equal(a, b)
