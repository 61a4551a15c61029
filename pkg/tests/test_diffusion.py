import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from hoisynth.diffusion import (NoiseSchedule, NonFiniteLossError, Normalizer, diffusion_loss, forward_noise,
                                forward_step, posterior_coefficients, posterior_mean, sample, train_step)


def test_schedule_layout_and_alpha_bar_identity():
    s = NoiseSchedule.linear(50)
    assert s.n_steps == 50 and s.betas[0] == 0 and s.alpha_bars[0] == 1
    assert s.betas[1] == pytest.approx(1e-4) and s.betas[50] == pytest.approx(0.02)
    manual = np.ones(51)
    for n in range(1, 51):
        manual[n] = manual[n - 1] * (1 - s.betas[n])
    assert np.max(np.abs(manual - s.alpha_bars)) < 1e-12


def test_cosine_schedule_is_monotone():
    ab = NoiseSchedule.cosine(100).alpha_bars
    assert np.all(np.diff(ab) < 0) and ab[-1] < 1e-3


def test_schedule_validation_and_serialisation():
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        NoiseSchedule.from_betas([0.5, 1.0])
    s = NoiseSchedule.linear(10, posterior_variance=True)
    back = NoiseSchedule.from_dict(s.to_dict())
    np.testing.assert_array_equal(back.betas, s.betas)
    assert back.posterior_variance


def test_posterior_variance_option():
    s = NoiseSchedule.linear(10)
    np.testing.assert_allclose(s.sigmas ** 2, s.betas)
    p = NoiseSchedule.linear(10, posterior_variance=True)
    assert p.sigmas[1] == 0.0 and np.all(p.sigmas[2:] ** 2 < s.betas[2:])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50))
def test_posterior_coefficients_match_gaussian_product(n):
    # q(x_{n-1} | x_n, x0) is proportional to N(x_{n-1}; sqrt(ab_{n-1}) x0, 1 - ab_{n-1})
    # times N(x_n; sqrt(a_n) x_{n-1}, beta_n); combine precisions directly.
    s = NoiseSchedule.linear(50)
    a, ab, b = s.alphas, s.alpha_bars, s.betas
    prec = 1 / (1 - ab[n - 1]) + a[n] / b[n] if n > 1 else None
    c_x, c_0 = posterior_coefficients(s, n)
    if n == 1:
        assert c_x == 0 and c_0 == pytest.approx(1.0)
        return
    assert c_x == pytest.approx(np.sqrt(a[n]) / b[n] / prec, rel=1e-10)
    assert c_0 == pytest.approx(np.sqrt(ab[n - 1]) / (1 - ab[n - 1]) / prec, rel=1e-10)


def test_posterior_mean_at_level_one_is_x0_hat():
    s = NoiseSchedule.linear(50)
    g = torch.Generator().manual_seed(0)
    x_n, x0 = torch.randn(3, 4, generator=g, dtype=torch.float64), torch.randn(3, 4, generator=g, dtype=torch.float64)
    assert torch.equal(posterior_mean(s, x_n, x0, 1), x0)
    assert torch.equal(posterior_mean(s, x_n, x0, torch.ones(3, dtype=torch.long)), x0)


def test_forward_noise_is_closed_form():
    s = NoiseSchedule.linear(20)
    x0 = torch.tensor([[1.0, -2.0]], dtype=torch.float64)
    eps = torch.tensor([[0.5, 0.25]], dtype=torch.float64)
    ab = s.alpha_bars[7]
    torch.testing.assert_close(forward_noise(s, x0, 7, noise=eps), np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps)
    with pytest.raises(ValueError):
        forward_noise(s, x0, 0)
    with pytest.raises(ValueError):
        forward_noise(s, x0, 21)


def test_iterated_chain_matches_closed_form_statistics():
    s = NoiseSchedule.linear(10, 0.01, 0.2)
    g = torch.Generator().manual_seed(1)
    m = 20_000
    x = torch.full((m,), 1.5, dtype=torch.float64)
    for n in range(1, 11):
        x = forward_step(s, x, n, g)
    ab = s.alpha_bars[10]
    mean, var = np.sqrt(ab) * 1.5, 1 - ab
    assert abs(x.mean().item() - mean) < 3 * np.sqrt(var / m)
    assert abs(x.var().item() - var) < 3 * var * np.sqrt(2 / (m - 1))


def test_sampling_with_perfect_model_returns_its_prediction():
    s = NoiseSchedule.linear(30)
    target = torch.tensor([0.3, -1.0, 2.0])
    out = sample(lambda x, n, c: target.expand_as(x), s, torch.zeros(5, 1), (5, 3),
                 torch.Generator().manual_seed(0))
    assert torch.equal(out, target.expand(5, 3))


def test_sampling_is_seeded():
    s = NoiseSchedule.linear(10)
    model = lambda x, n, c: 0.5 * x + c
    c = torch.ones(2, 3)
    a = sample(model, s, c, (2, 3), torch.Generator().manual_seed(4))
    b = sample(model, s, c, (2, 3), torch.Generator().manual_seed(4))
    assert torch.equal(a, b)


def test_loss_is_l1_on_reconstruction():
    s = NoiseSchedule.linear(10)
    x0 = torch.randn(6, 4, generator=torch.Generator().manual_seed(0))
    loss = diffusion_loss(lambda x, n, c: x0, s, x0, torch.zeros(6, 1), torch.Generator().manual_seed(1))
    assert loss.item() == 0.0
    loss = diffusion_loss(lambda x, n, c: x0 + 0.25, s, x0, torch.zeros(6, 1), torch.Generator().manual_seed(1))
    assert loss.item() == pytest.approx(0.25)


def test_loss_uses_levels_and_noise_from_the_generator():
    s = NoiseSchedule.linear(10)
    x0 = torch.randn(4, 2, generator=torch.Generator().manual_seed(0))
    seen = {}

    def model(x, n, c):
        seen["x"], seen["n"] = x, n
        return torch.zeros_like(x)

    diffusion_loss(model, s, x0, torch.zeros(4, 1), torch.Generator().manual_seed(3))
    g = torch.Generator().manual_seed(3)
    n = torch.randint(1, 11, (4,), generator=g)
    eps = torch.randn(x0.shape, generator=g)
    assert torch.equal(seen["n"], n)
    torch.testing.assert_close(seen["x"], forward_noise(s, x0, n, noise=eps))


def test_train_step_rejects_non_finite_loss():
    s = NoiseSchedule.linear(5)
    w = torch.zeros(1, requires_grad=True)
    model = lambda x, n, c: x * w + float("nan")
    with pytest.raises(NonFiniteLossError):
        train_step(model, s, torch.ones(2, 3), torch.zeros(2, 1))


def test_normalizer_roundtrip():
    data = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 7, 4))
    data[..., 3] = 1.0
    norm = Normalizer.fit(data)
    assert norm.std[3] == pytest.approx(1e-2)
    np.testing.assert_allclose(norm.decode(norm.encode(data)), data, atol=1e-12)
    t = torch.as_tensor(data)
    torch.testing.assert_close(norm.decode(norm.encode(t)), t)
    back = Normalizer.from_arrays(norm.arrays("x"), "x")
    np.testing.assert_array_equal(back.mean, norm.mean)
