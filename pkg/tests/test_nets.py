import math

import numpy as np
import pytest

from afglosa.nets import (ACCEL_LIMIT, HIDDEN, PARAM_ORDER, AdamConfig, AdamState, NumericError,
                          PolicySet, adam_step, categorical_entropy, clipped_surrogate,
                          gaussian_entropy, gaussian_logpdf, load_checkpoint, orthogonal,
                          ratio_of, sample_categorical, sample_gaussian, save_checkpoint, softmax)


def batch(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "x": rng.uniform(-1, 1, (n, 8)),
        "gap": rng.integers(0, 2, n),
        "raw": rng.normal(0, 1.5, n),
        "adv": rng.normal(0, 1, n),
        "target": rng.normal(0, 2, n),
    }


def fd_check(pol, loss_fn, keys, h=1e-6, n_coords=12, seed=0):
    """Largest relative error between analytic and central-difference grads."""
    rng = np.random.default_rng(seed)
    _, grads = loss_fn()
    worst = 0.0
    for k in keys:
        arr = pol.params[k]
        for _ in range(n_coords):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = loss_fn()[0]
            arr[idx] = old - h
            dn = loss_fn()[0]
            arr[idx] = old
            num = (up - dn) / (2 * h)
            ana = grads[k][idx]
            worst = max(worst, abs(num - ana) / max(1e-8, abs(num) + abs(ana)))
    return worst


def test_softmax_and_entropy_hand_values():
    p = softmax(np.array([0.0, math.log(3.0)]))
    np.testing.assert_allclose(p, [0.25, 0.75])
    assert categorical_entropy(np.array([0.5, 0.5])) == pytest.approx(math.log(2))
    assert gaussian_entropy(1.0) == pytest.approx(0.5 * math.log(2 * math.pi * math.e))
    assert gaussian_logpdf(0.0, 0.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_orthogonal_columns():
    W = orthogonal(np.random.default_rng(0), 8, 128, 1.0)
    np.testing.assert_allclose(W @ W.T, np.eye(8), atol=1e-12)


def test_samplers_report_log_probabilities():
    rng = np.random.default_rng(1)
    a, lp = sample_categorical(np.array([0.2, 0.8]), rng)
    assert lp == pytest.approx(math.log([0.2, 0.8][a]))
    clipped, raw, lp = sample_gaussian(0.5, 2.0, rng)
    assert -ACCEL_LIMIT <= clipped <= ACCEL_LIMIT
    assert lp == pytest.approx(gaussian_logpdf(raw, 0.5, 2.0))


def test_policy_forward_shapes_and_bounds():
    pol = PolicySet(seed=3)
    x = batch(5)["x"]
    h = pol.encode(x)
    assert h.shape == (5, HIDDEN)
    probs = pol.discrete_forward(h)
    np.testing.assert_allclose(probs.sum(1), 1.0)
    mu, sigma = pol.continuous_forward(h, np.ones(5))
    assert np.all(np.abs(mu) <= ACCEL_LIMIT) and sigma == pytest.approx(1.0)
    assert pol.critic_forward(x).shape == (5,)


def test_encode_rejects_non_finite():
    with pytest.raises(NumericError):
        PolicySet().encode(np.full(8, np.nan))


def test_continuous_only_policy_always_advises():
    pol = PolicySet(seed=0, discrete=False)
    gap, *_ = pol.act(np.zeros(8), np.random.default_rng(0))
    assert gap == 1


@pytest.mark.parametrize("seed", range(3))
def test_discrete_gradient_matches_finite_differences(seed):
    b = batch(seed=seed)
    pol = PolicySet(seed=seed)
    logp_old = np.log(pol.discrete_forward(pol.encode(b["x"]))[np.arange(8), b["gap"]]) + 0.03
    f = lambda: pol.discrete_loss(b["x"], b["gap"], logp_old, b["adv"], 0.1)[:2]
    assert fd_check(pol, f, ("enc_W", "enc_b", "dis_W", "dis_b")) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_continuous_gradient_matches_finite_differences(seed):
    b = batch(seed=seed)
    pol = PolicySet(seed=seed, sigma_init=0.7)
    mu, s = pol.continuous_forward(pol.encode(b["x"]), b["gap"])
    logp_old = gaussian_logpdf(b["raw"], mu, s) - 0.02
    f = lambda: pol.continuous_loss(b["x"], b["gap"], b["raw"], logp_old, b["adv"], 0.1)[:2]
    assert fd_check(pol, f, ("enc_W", "enc_b", "con_W", "con_b", "log_sigma")) < 1e-4


def test_critic_gradient_and_simple_losses():
    b = batch()
    pol = PolicySet(seed=4)
    f = lambda: pol.critic_loss(b["x"], b["target"])
    assert fd_check(pol, f, ("cri_W1", "cri_b1", "cri_W2", "cri_b2")) < 1e-4
    # single transition with V(s)=0 and target 2 gives loss 4
    pol.params["cri_W2"][:] = 0.0
    pol.params["cri_b2"][:] = 0.0
    assert pol.critic_loss(b["x"][:1], np.array([2.0]))[0] == 4.0


def test_critic_regression_decreases_on_frozen_batch():
    b = batch(32, seed=2)
    pol = PolicySet(seed=2)
    state = AdamState(("cri_W1", "cri_b1", "cri_W2", "cri_b2"), pol.params)
    losses = []
    for _ in range(50):
        loss, g = pol.critic_loss(b["x"], b["target"])
        losses.append(loss)
        adam_step(pol.params, g, state, 1e-3)
    assert all(b_ < a for a, b_ in zip(losses, losses[1:]))


def test_masked_continuous_loss_ignores_unselected_samples():
    b = batch()
    pol = PolicySet(seed=1)
    mu, s = pol.continuous_forward(pol.encode(b["x"]), b["gap"])
    lp = gaussian_logpdf(b["raw"], mu, s)
    mask = np.zeros(8, bool)
    mask[:3] = True
    full = pol.continuous_loss(b["x"][:3], b["gap"][:3], b["raw"][:3], lp[:3], b["adv"][:3], 0.1)
    part = pol.continuous_loss(b["x"], b["gap"], b["raw"], lp, b["adv"], 0.1, mask=mask)
    assert part[0] == pytest.approx(full[0])
    for k in full[1]:
        np.testing.assert_allclose(part[1][k], full[1][k], atol=1e-15)


def test_adam_step_against_hand_update():
    cfg = AdamConfig()
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(("w",), params)
    g = np.array([0.5, -1.0])
    adam_step(params, {"w": g}, state, 0.1, cfg)
    # first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + cfg.eps)
    np.testing.assert_allclose(params["w"], expected, rtol=0, atol=1e-15)


def test_ratio_of_is_exact_at_equality_and_capped():
    assert ratio_of(-1.3, -1.3) == 1.0
    assert ratio_of(1000.0, 0.0) == pytest.approx(1e6)


def test_clipped_surrogate_hand_values():
    assert clipped_surrogate(1.3, 2.0, 0.1) == pytest.approx(-2.2)
    assert clipped_surrogate(0.5, -1.0, 0.1) == pytest.approx(0.9)


@pytest.mark.parametrize("discrete", [True, False])
def test_checkpoint_round_trip_is_bit_identical(tmp_path, discrete):
    pol = PolicySet(seed=5, discrete=discrete, sigma_init=0.37)
    rng = np.random.default_rng(0)
    for k in PARAM_ORDER:
        if discrete or k not in ("dis_W", "dis_b"):
            pol.params[k] = pol.params[k] + rng.normal(0, 1e-3, pol.params[k].shape)
    path = tmp_path / "ck.txt"
    save_checkpoint(pol, path, {"lr": 3e-5})
    text = path.read_text()
    assert ("param dis_W" in text) == discrete
    back, hyper = load_checkpoint(path)
    assert hyper == {"lr": "3e-05"}
    assert back.discrete == discrete
    for k in PARAM_ORDER:
        if discrete or k not in ("dis_W", "dis_b"):
            assert np.array_equal(back.params[k], pol.params[k])


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(p)
