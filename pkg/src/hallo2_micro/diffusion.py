"""Noise schedule, forward corruption, training objective, ancestral sampler.

The forward process mixes clean latents with unit Gaussian noise,
z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, under a linear beta schedule;
the sampler walks t = T..1 with
z_{t-1} = (z_t - (1 - a_t)/sqrt(1 - abar_t) eps_hat) / sqrt(a_t) + sigma_t n,
adding no noise on the final step. Timesteps are 1-based everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import Tensor, tmean


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta / alpha / alpha_bar / sigma tables, 1-indexed via t."""

    T: int
    betas: np.ndarray       # beta[t-1]
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def beta(self, t):
        return self.betas[np.asarray(t) - 1]

    def alpha(self, t):
        return self.alphas[np.asarray(t) - 1]

    def alpha_bar(self, t):
        return self.alpha_bars[np.asarray(t) - 1]

    def sigma(self, t):
        return self.sigmas[np.asarray(t) - 1]

    def check_t(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep {t} outside 1..{self.T}")


def make_schedule(T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; sigma_t = sqrt(beta_t)."""
    if T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        T=T,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        sigmas=np.sqrt(betas),
    )


@dataclass
class DiffusionBatch:
    """One training minibatch: z0 plus its noised version at per-sample t."""

    z0: np.ndarray     # (B, ...)
    t: np.ndarray      # (B,) ints in 1..T
    eps: np.ndarray    # same shape as z0
    zt: np.ndarray


def _per_sample(coeff: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reshape a (B,) coefficient vector to broadcast over trailing dims."""
    return coeff.reshape((-1,) + (1,) * (like.ndim - 1))


def forward_diffuse(z0: np.ndarray, t, sched: NoiseSchedule, rng: Rng,
                    eps: np.ndarray | None = None):
    """Noise z0 to step t. t may be a scalar or per-sample (first axis) vector.

    eps overrides the drawn noise (test hook). Returns (zt, eps).
    """
    sched.check_t(t)
    if eps is None:
        eps = rng.normal(z0.shape)
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    abar = sched.alpha_bar(t)
    if np.ndim(t) == 0:
        zt = np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps
    else:
        zt = _per_sample(np.sqrt(abar), z0) * z0 \
            + _per_sample(np.sqrt(1.0 - abar), z0) * eps
    return zt, eps


def make_batch(z0: np.ndarray, sched: NoiseSchedule, rng: Rng) -> DiffusionBatch:
    """Draw per-sample timesteps and noise for a (B, ...) latent batch."""
    B = z0.shape[0]
    t = np.asarray(rng.integers(1, sched.T + 1, (B,)))
    zt, eps = forward_diffuse(z0, t, sched, rng)
    return DiffusionBatch(z0=z0, t=t, eps=eps, zt=zt)


def denoise_loss(predictor, batch: DiffusionBatch, cond) -> Tensor:
    """Mean squared error between true and predicted noise (per element).

    Uniform timestep weighting. predictor(zt, t, cond) must return a Tensor
    shaped like batch.eps.
    """
    pred = predictor(batch.zt, batch.t, cond)
    if pred.shape != batch.eps.shape:
        raise ValueError(
            f"prediction shape {pred.shape} != eps shape {batch.eps.shape}"
        )
    diff = pred - Tensor(batch.eps)
    return tmean(diff * diff)


def ddpm_step(zt: np.ndarray, t: int, eps_hat: np.ndarray,
              sched: NoiseSchedule, rng: Rng,
              noise: np.ndarray | None = None) -> np.ndarray:
    """One reverse step t -> t-1; no noise is added at t = 1."""
    sched.check_t(t)
    a = sched.alpha(t)
    abar = sched.alpha_bar(t)
    mean = (zt - (1.0 - a) / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mean
    if noise is None:
        noise = rng.normal(zt.shape)
    return mean + sched.sigma(t) * noise


def sample(predictor, cond, shape, sched: NoiseSchedule, rng: Rng) -> np.ndarray:
    """Ancestral sampling from pure noise; deterministic under a fixed rng."""
    zt = rng.normal(shape)
    for t in range(sched.T, 0, -1):
        eps_hat = predictor(zt, t, cond)
        if isinstance(eps_hat, Tensor):
            eps_hat = eps_hat.data
        zt = ddpm_step(zt, t, eps_hat, sched, rng)
    return zt
