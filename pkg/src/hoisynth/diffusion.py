"""Conditional DDPM with an x0-predicting network.

Noise levels run 1..N. Arrays in :class:`NoiseSchedule` are indexed by the
level directly, with index 0 holding the clean state (beta 0, alpha_bar 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

# model(x_n, n, c) -> x0_hat, batched over the leading dimension
Denoiser = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray          # (N + 1,), betas[0] = 0
    posterior_variance: bool = False

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 2 or b[0] != 0.0:
            raise ValueError("betas must be a 1-D array [0, beta_1, ..., beta_N]")
        if np.any(b[1:] < 0) or np.any(b[1:] >= 1):
            raise ValueError("betas must lie in [0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def from_betas(cls, betas, posterior_variance: bool = False) -> "NoiseSchedule":
        return cls(np.concatenate([[0.0], np.asarray(betas, dtype=np.float64)]), posterior_variance)

    @classmethod
    def linear(cls, n_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02, **kw) -> "NoiseSchedule":
        return cls.from_betas(np.linspace(beta_start, beta_end, n_steps), **kw)

    @classmethod
    def cosine(cls, n_steps: int, s: float = 0.008, max_beta: float = 0.999, **kw) -> "NoiseSchedule":
        f = lambda t: math.cos((t / n_steps + s) / (1 + s) * math.pi / 2) ** 2
        betas = [min(1 - f(i) / f(i - 1), max_beta) for i in range(1, n_steps + 1)]
        return cls.from_betas(betas, **kw)

    @property
    def n_steps(self) -> int:
        return len(self.betas) - 1

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def sigmas(self) -> np.ndarray:
        """Reverse-step standard deviations; sigma_n^2 = beta_n unless posterior variance is selected."""
        if not self.posterior_variance:
            return np.sqrt(self.betas)
        ab = self.alpha_bars
        var = np.zeros_like(self.betas)
        var[1:] = self.betas[1:] * (1 - ab[:-1]) / (1 - ab[1:])
        return np.sqrt(var)

    def to_dict(self) -> dict:
        return {"betas": self.betas[1:].tolist(), "posterior_variance": self.posterior_variance}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls.from_betas(d["betas"], bool(d.get("posterior_variance", False)))


def _check_level(schedule: NoiseSchedule, n) -> None:
    arr = np.asarray(n)
    if np.any(arr < 1) or np.any(arr > schedule.n_steps):
        raise ValueError(f"noise level must be in [1, {schedule.n_steps}], got {n}")


def _per_batch(values: np.ndarray, n, like: torch.Tensor) -> torch.Tensor:
    """Gather schedule values at level(s) ``n`` shaped to broadcast against ``like``."""
    idx = torch.as_tensor(n).reshape(-1).cpu().numpy()
    v = torch.as_tensor(values[idx], dtype=like.dtype)
    if v.numel() == 1:
        return v.reshape(())
    return v.reshape((-1,) + (1,) * (like.dim() - 1))


def forward_noise(schedule: NoiseSchedule, x0: torch.Tensor, n, generator: torch.Generator | None = None,
                  noise: torch.Tensor | None = None) -> torch.Tensor:
    """Sample x_n ~ q(x_n | x_0) = N(sqrt(abar_n) x0, (1 - abar_n) I)."""
    _check_level(schedule, n)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    ab = schedule.alpha_bars
    return _per_batch(np.sqrt(ab), n, x0) * x0 + _per_batch(np.sqrt(1 - ab), n, x0) * noise


def forward_step(schedule: NoiseSchedule, x_prev: torch.Tensor, n, generator: torch.Generator | None = None) -> torch.Tensor:
    """One Markov step x_{n-1} -> x_n ~ N(sqrt(1 - beta_n) x_{n-1}, beta_n I)."""
    _check_level(schedule, n)
    eps = torch.randn(x_prev.shape, generator=generator, dtype=x_prev.dtype)
    b = schedule.betas
    return _per_batch(np.sqrt(1 - b), n, x_prev) * x_prev + _per_batch(np.sqrt(b), n, x_prev) * eps


def posterior_coefficients(schedule: NoiseSchedule, n) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients (on x_n, on x0_hat) of the reverse-step mean at level n."""
    a, ab = schedule.alphas, schedule.alpha_bars
    n = np.asarray(n)
    denom = 1.0 - ab[n]
    c_x = np.sqrt(a[n]) * (1.0 - ab[n - 1]) / denom
    c_0 = np.sqrt(ab[n - 1]) * (1.0 - a[n]) / denom
    return c_x, c_0


def posterior_mean(schedule: NoiseSchedule, x_n: torch.Tensor, x0_hat: torch.Tensor, n) -> torch.Tensor:
    """mu = (sqrt(a_n)(1 - abar_{n-1}) x_n + sqrt(abar_{n-1})(1 - a_n) x0_hat) / (1 - abar_n)."""
    _check_level(schedule, n)
    c_x, c_0 = posterior_coefficients(schedule, torch.as_tensor(n).reshape(-1).cpu().numpy())
    shape = (-1,) + (1,) * (x_n.dim() - 1)
    cx = torch.as_tensor(c_x, dtype=x_n.dtype)
    c0 = torch.as_tensor(c_0, dtype=x_n.dtype)
    if cx.numel() == 1:
        cx, c0 = cx.reshape(()), c0.reshape(())
    else:
        cx, c0 = cx.reshape(shape), c0.reshape(shape)
    return cx * x_n + c0 * x0_hat


def diffusion_loss(model: Denoiser, schedule: NoiseSchedule, x0: torch.Tensor, cond: torch.Tensor,
                   generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean absolute error between x0 and the model's reconstruction from a random level."""
    b = x0.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    n = torch.randint(1, schedule.n_steps + 1, (b,), generator=generator)
    x_n = forward_noise(schedule, x0, n, generator)
    x0_hat = model(x_n, n, cond)
    return (x0_hat - x0).abs().mean()


def train_step(model: Denoiser, schedule: NoiseSchedule, x0: torch.Tensor, cond: torch.Tensor,
               generator: torch.Generator | None = None, optimizer=None) -> float:
    """One optimisation step; gradients are populated (and applied if an optimizer is given)."""
    if optimizer is not None:
        optimizer.zero_grad()
    loss = diffusion_loss(model, schedule, x0, cond, generator)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss.item()} (batch of {x0.shape[0]})")
    loss.backward()
    if optimizer is not None:
        optimizer.step()
    return float(loss.item())


@torch.no_grad()
def sample(model: Denoiser, schedule: NoiseSchedule, cond: torch.Tensor, x_shape: tuple[int, ...],
           generator: torch.Generator | None = None, dtype=torch.float32) -> torch.Tensor:
    """Ancestral sampling from x_N ~ N(0, I) down to x_0; no noise is added on the last step."""
    x = torch.randn(x_shape, generator=generator, dtype=dtype)
    sig = schedule.sigmas
    b = x_shape[0]
    for n in range(schedule.n_steps, 0, -1):
        levels = torch.full((b,), n, dtype=torch.long)
        x0_hat = model(x, levels, cond)
        mu = posterior_mean(schedule, x, x0_hat, n)
        if n > 1:
            x = mu + float(sig[n]) * torch.randn(x_shape, generator=generator, dtype=dtype)
        else:
            x = mu
    return x


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension standardisation fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray, min_std: float = 1e-2) -> "Normalizer":
        flat = np.asarray(data, dtype=np.float64).reshape(-1, np.shape(data)[-1])
        return cls(flat.mean(axis=0), np.maximum(flat.std(axis=0), min_std))

    def encode(self, x):
        if isinstance(x, torch.Tensor):
            return (x - torch.as_tensor(self.mean, dtype=x.dtype)) / torch.as_tensor(self.std, dtype=x.dtype)
        return (np.asarray(x) - self.mean) / self.std

    def decode(self, z):
        if isinstance(z, torch.Tensor):
            return z * torch.as_tensor(self.std, dtype=z.dtype) + torch.as_tensor(self.mean, dtype=z.dtype)
        return np.asarray(z) * self.std + self.mean

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {prefix + ".mean": self.mean, prefix + ".std": self.std}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str) -> "Normalizer":
        return cls(arrays[prefix + ".mean"].astype(np.float64), arrays[prefix + ".std"].astype(np.float64))
