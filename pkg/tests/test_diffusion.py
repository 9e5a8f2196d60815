"""Diffusion machinery: schedule algebra, moment identities, sampler inverses."""

import numpy as np
import pytest

from hallo2_micro.diffusion import (
    ddpm_step,
    denoise_loss,
    forward_diffuse,
    make_batch,
    make_schedule,
    sample,
)
from hallo2_micro.rng import Rng
from hallo2_micro.tensor import Tensor


def test_schedule_two_step_hand_product():
    sched = make_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(sched.betas, [0.1, 0.2])
    np.testing.assert_allclose(sched.alpha_bars, [0.9, 0.72])
    np.testing.assert_allclose(sched.sigmas, np.sqrt([0.1, 0.2]))


def test_schedule_default_terminal_alpha_bar():
    sched = make_schedule()
    # oracle: recompute the running product independently
    oracle = 1.0
    for beta in np.linspace(1e-4, 0.02, 1000):
        oracle *= 1.0 - beta
    np.testing.assert_allclose(sched.alpha_bars[-1], oracle, rtol=1e-12)
    assert sched.alpha_bars[-1] < 0.01


@pytest.mark.parametrize("args", [(50, 1e-4, 0.05), (10, 0.01, 0.3), (2, 0.1, 0.2)])
def test_schedule_monotonicity(args):
    sched = make_schedule(*args)
    assert np.all(np.diff(sched.betas) > 0)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert np.all((sched.betas > 0) & (sched.betas < 1))


def test_schedule_rejects_bad_ranges():
    with pytest.raises(ValueError):
        make_schedule(10, 0.2, 0.1)
    with pytest.raises(ValueError):
        make_schedule(1, 0.1, 0.2)
    with pytest.raises(ValueError):
        make_schedule(10, 0.0, 0.2)


def test_forward_diffuse_zero_noise_hook():
    sched = make_schedule(10, 0.01, 0.2)
    z0 = Rng(1).normal((2, 3))
    zt, eps = forward_diffuse(z0, 4, sched, Rng(0), eps=np.zeros((2, 3)))
    np.testing.assert_allclose(zt, np.sqrt(sched.alpha_bar(4)) * z0)
    np.testing.assert_array_equal(eps, 0.0)


def test_forward_diffuse_zero_signal():
    sched = make_schedule(10, 0.01, 0.2)
    zt, eps = forward_diffuse(np.zeros((4, 4)), 7, sched, Rng(3))
    np.testing.assert_allclose(zt, np.sqrt(1 - sched.alpha_bar(7)) * eps)


def test_forward_diffuse_rejects_bad_t():
    sched = make_schedule(10, 0.01, 0.2)
    with pytest.raises(ValueError, match="timestep"):
        forward_diffuse(np.zeros(3), 0, sched, Rng(0))
    with pytest.raises(ValueError, match="timestep"):
        forward_diffuse(np.zeros(3), 11, sched, Rng(0))


def test_forward_moments_monte_carlo():
    # with unit-variance z0, var(zt) = abar + (1 - abar) = 1 within 0.05
    sched = make_schedule(100, 1e-3, 0.05)
    rng = Rng(17)
    z0 = rng.normal((10_000,))
    for t in sorted(set(int(v) for v in rng.integers(1, 101, (10,)))):
        zt, _ = forward_diffuse(z0, t, sched, rng.split(t))
        assert abs(zt.var() - 1.0) < 0.05, f"t={t}"
        # noise-term mean identity: E[zt] = sqrt(abar)*mean(z0) ~ 0
        assert abs(zt.mean()) < 0.05


def test_denoise_loss_zero_for_oracle_predictor():
    sched = make_schedule(20, 0.01, 0.2)
    z0 = Rng(2).normal((4, 2, 3))
    batch = make_batch(z0, sched, Rng(5))

    def oracle(zt, t, cond):
        return Tensor(batch.eps)

    assert denoise_loss(oracle, batch, None).item() == 0.0


def test_denoise_loss_unit_for_zero_predictor():
    sched = make_schedule(20, 0.01, 0.2)
    z0 = Rng(2).normal((64, 8, 8))
    batch = make_batch(z0, sched, Rng(6))

    def zero(zt, t, cond):
        return Tensor(np.zeros_like(zt))

    loss = denoise_loss(zero, batch, None).item()
    assert abs(loss - 1.0) < 0.05


def test_denoise_loss_gradient_matches_finite_difference():
    sched = make_schedule(20, 0.01, 0.2)
    z0 = Rng(9).normal((3, 5))
    batch = make_batch(z0, sched, Rng(10))
    w = Tensor(Rng(11).normal((5, 5)), requires_grad=True)

    def predictor(zt, t, cond):
        from hallo2_micro import tensor as T
        return T.matmul(Tensor(zt), w)

    loss = denoise_loss(predictor, batch, None)
    loss.backward()
    grad = w.grad.copy()
    h = 1e-5
    flat = w.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = denoise_loss(predictor, batch, None).item()
        flat[i] = orig - h
        lo = denoise_loss(predictor, batch, None).item()
        flat[i] = orig
        fd = (hi - lo) / (2 * h)
        denom = max(abs(fd), abs(grad.reshape(-1)[i]), 1e-6)
        assert abs(fd - grad.reshape(-1)[i]) / denom < 1e-4


def test_denoise_loss_shape_mismatch_error():
    sched = make_schedule(20, 0.01, 0.2)
    batch = make_batch(Rng(1).normal((2, 3)), sched, Rng(2))

    def wrong(zt, t, cond):
        return Tensor(np.zeros((2, 4)))

    with pytest.raises(ValueError, match="shape"):
        denoise_loss(wrong, batch, None)


def test_ddpm_step_t1_inverts_forward():
    sched = make_schedule(30, 0.01, 0.2)
    z0 = Rng(4).normal((2, 4, 4))
    zt, eps = forward_diffuse(z0, 1, sched, Rng(5))
    back = ddpm_step(zt, 1, eps, sched, Rng(6))
    np.testing.assert_allclose(back, z0, atol=1e-10)


def test_ddpm_step_pure_rescale_with_zero_eps_hat():
    sched = make_schedule(30, 0.01, 0.2)
    zt = Rng(7).normal((3, 3))
    out = ddpm_step(zt, 5, np.zeros_like(zt), sched, Rng(8), noise=np.zeros_like(zt))
    np.testing.assert_allclose(out, zt / np.sqrt(sched.alpha(5)))


def test_ddpm_step_rejects_bad_t():
    sched = make_schedule(30, 0.01, 0.2)
    with pytest.raises(ValueError, match="timestep"):
        ddpm_step(np.zeros(2), 31, np.zeros(2), sched, Rng(0))


def test_full_chain_oracle_reconstruction():
    # Walk the forward chain step by step, then invert it with a predictor
    # that knows the true per-step noise; recovers z0 to 1e-6.
    sched = make_schedule(40, 1e-3, 0.05)
    rng = Rng(12)
    z0 = rng.normal((2, 3))

    # Build a synthetic trajectory z_t for t=0..T via incremental noising,
    # recording the exact eps that Eq-style closure implies at each t.
    zs = {0: z0}
    eps_at = {}
    for t in range(1, sched.T + 1):
        eps_t = rng.split(1000 + t).normal(z0.shape)
        zs[t], _ = forward_diffuse(z0, t, sched, rng, eps=eps_t)
        eps_at[t] = eps_t

    def oracle_predictor(zt_val, t, cond):
        # exact noise consistent with the recorded trajectory at step t
        abar = sched.alpha_bar(t)
        return (zt_val - np.sqrt(abar) * z0) / np.sqrt(1.0 - abar)

    zt = zs[sched.T]
    for t in range(sched.T, 0, -1):
        eps_hat = oracle_predictor(zt, t, None)
        zt = ddpm_step(zt, t, eps_hat, sched, Rng(0), noise=np.zeros_like(zt))
    np.testing.assert_allclose(zt, z0, atol=1e-6)


def test_sample_deterministic_and_shaped():
    sched = make_schedule(15, 0.01, 0.2)

    def predictor(zt, t, cond):
        return np.tanh(zt) * 0.5

    a = sample(predictor, None, (2, 3, 4), sched, Rng(99))
    b = sample(predictor, None, (2, 3, 4), sched, Rng(99))
    assert a.shape == (2, 3, 4)
    np.testing.assert_array_equal(a, b)
    c = sample(predictor, None, (2, 3, 4), sched, Rng(100))
    assert not np.array_equal(a, c)
