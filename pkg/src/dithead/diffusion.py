"""Noise schedules, the forward noising process and DDPM / DDIM reverse steps.

Timesteps are 1-based: ``t`` runs over ``1..T`` and ``alpha_bar(0) == 1`` is the
"no noise" convention, so ``q_sample(z0, 0, eps)`` returns ``z0``.  The network is
an epsilon predictor throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DimensionError, ParameterError

Tensor = torch.Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables; index ``t - 1`` holds the value for step ``t``."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def posterior_variance(self, t: int) -> float:
        """Variance of q(z_{t-1} | z_t, z_0); zero at t = 1."""
        return (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) == 0:
        raise ParameterError("betas must be a non-empty vector")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ParameterError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(betas, alphas, alpha_bars)


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return schedule_from_betas([beta_start])
    i = np.arange(T, dtype=np.float64)
    return schedule_from_betas(beta_start + i / (T - 1) * (beta_end - beta_start))


def adm_linear_schedule(T: int) -> NoiseSchedule:
    """Linear ramp 1e-4..0.02 rescaled by 1000/T so short chains still end near pure noise."""
    scale = 1000.0 / T
    return make_linear_schedule(T, scale * 1e-4, min(scale * 0.02, 0.999))


def _check_t(t: int, schedule: NoiseSchedule, allow_zero: bool = True) -> None:
    lo = 0 if allow_zero else 1
    if not (lo <= int(t) <= schedule.T):
        raise ParameterError(f"timestep {t} outside [{lo}, {schedule.T}]")


def _expand(values: Tensor, like: Tensor) -> Tensor:
    return values.reshape(values.shape + (1,) * (like.dim() - values.dim()))


def _alpha_bar_tensor(t, schedule: NoiseSchedule, like: Tensor) -> Tensor:
    """alpha_bar for a scalar step or a per-batch-element vector of steps."""
    if isinstance(t, Tensor) and t.dim() > 0:
        table = torch.as_tensor(np.concatenate([[1.0], schedule.alpha_bars]), dtype=like.dtype)
        if int(t.min()) < 0 or int(t.max()) > schedule.T:
            raise ParameterError(f"timesteps outside [0, {schedule.T}]")
        return _expand(table[t.long()], like)
    _check_t(int(t), schedule)
    return torch.tensor(schedule.alpha_bar(int(t)), dtype=like.dtype)


def q_sample(z0: Tensor, t, eps: Tensor, schedule: NoiseSchedule) -> Tensor:
    """Closed-form forward process: sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.

    ``t`` is an int or a 1-d tensor of per-batch-element steps (leading axis).
    """
    if eps.shape != z0.shape:
        raise DimensionError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    ab = _alpha_bar_tensor(t, schedule, z0)
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps


def q_sample_iterative(z0: Tensor, t: int, eps_sequence, schedule: NoiseSchedule) -> Tensor:
    """Apply single-step transitions z_s = sqrt(1-b_s) z_{s-1} + sqrt(b_s) eps_s for s = 1..t."""
    _check_t(t, schedule)
    if len(eps_sequence) != t:
        raise ParameterError(f"need {t} noise draws, got {len(eps_sequence)}")
    z = z0
    for s, eps in enumerate(eps_sequence, start=1):
        if eps.shape != z0.shape:
            raise DimensionError("noise draw shape differs from z0")
        b = schedule.beta(s)
        z = math.sqrt(1.0 - b) * z + math.sqrt(b) * eps
    return z


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddim"
    num_inference_steps: int = 250
    eta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ddim", "ddpm"):
            raise ParameterError(f"sampler kind must be ddim or ddpm, got {self.kind!r}")
        if self.num_inference_steps < 1:
            raise ParameterError("num_inference_steps must be positive")
        if not (0.0 <= self.eta <= 1.0):
            raise ParameterError("eta must lie in [0, 1]")

    def timesteps(self, schedule: NoiseSchedule) -> list[int]:
        """Strictly decreasing steps from T down to 1 (uniform spacing)."""
        if self.kind == "ddpm":
            return list(range(schedule.T, 0, -1))
        return inference_timesteps(schedule.T, self.num_inference_steps)


def inference_timesteps(T: int, n: int) -> list[int]:
    if not (1 <= n <= T):
        raise ParameterError(f"inference steps must lie in [1, {T}], got {n}")
    if n == 1:
        return [T]
    grid = np.floor(np.linspace(1.0, float(T), n) + 0.5).astype(int)
    return [int(v) for v in grid[::-1]]


def predict_z0(z_t: Tensor, eps_pred: Tensor, t: int, schedule: NoiseSchedule) -> Tensor:
    ab = schedule.alpha_bar(t)
    return (z_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)


def ddim_step(
    z_t: Tensor,
    eps_pred: Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    generator: torch.Generator | None = None,
    noise: Tensor | None = None,
) -> Tensor:
    """One implicit-sampler move from step ``t`` to ``t_prev`` (< t).

    Fresh noise is only drawn when ``eta > 0``; pass ``noise`` to supply it.
    """
    if eps_pred.shape != z_t.shape:
        raise DimensionError("eps_pred must match z_t")
    if not (schedule.T >= t > t_prev >= 0):
        raise ParameterError(f"need T >= t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    z0_hat = predict_z0(z_t, eps_pred, t, schedule)
    sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)
    dir_coef = math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0))
    out = math.sqrt(ab_prev) * z0_hat + dir_coef * eps_pred
    if sigma > 0.0:
        if noise is None:
            noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype)
        out = out + sigma * noise
    return out


def ddpm_step(z_t: Tensor, eps_pred: Tensor, t: int, schedule: NoiseSchedule, noise: Tensor | None) -> Tensor:
    """Ancestral step to t-1 with the fixed posterior variance; no noise at t = 1."""
    _check_t(t, schedule, allow_zero=False)
    if eps_pred.shape != z_t.shape:
        raise DimensionError("eps_pred must match z_t")
    a = float(schedule.alphas[t - 1])
    b = schedule.beta(t)
    mean = (z_t - (b / math.sqrt(1.0 - schedule.alpha_bar(t))) * eps_pred) / math.sqrt(a)
    if t == 1 or noise is None:
        return mean
    return mean + math.sqrt(schedule.posterior_variance(t)) * noise
