"""Conditional DDPM pieces: schedule, forward noising, denoiser, sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def K(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def torch(self, name: str, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(getattr(self, name), dtype=dtype)

    def to_dict(self) -> dict:
        return {"K": self.K, "betas": [float(b) for b in self.betas]}


def make_linear_schedule(K: int = 50, beta_start: float = 1e-4, beta_end: float = 0.05) -> NoiseSchedule:
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, K))


def _per_sample(values: torch.Tensor, k: torch.Tensor, ndim: int) -> torch.Tensor:
    return values[k].reshape(k.shape + (1,) * (ndim - k.ndim))


def q_sample(x0: torch.Tensor, k, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Closed-form forward noising ``sqrt(abar_k) x0 + sqrt(1 - abar_k) eps``."""
    if eps.shape != x0.shape:
        raise ValueError("eps must match x0 in shape")
    k = torch.as_tensor(k, dtype=torch.long)
    if torch.any(k < 0) or torch.any(k >= sched.K):
        raise ValueError(f"step index out of range [0, {sched.K})")
    abar = sched.torch("alpha_bars", x0.dtype)
    if k.ndim == 0:
        a = abar[k]
        return a.sqrt() * x0 + (1.0 - a).sqrt() * eps
    a = _per_sample(abar, k, x0.ndim)
    return a.sqrt() * x0 + (1.0 - a).sqrt() * eps


def timestep_embedding(k: torch.Tensor, dim: int = 64, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = k.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1).to(torch.get_default_dtype())


class ResBlock(nn.Module):
    def __init__(self, ch: int, emb_dim: int, groups: int = 8) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.emb = nn.Linear(emb_dim, ch)
        self.norm2 = nn.GroupNorm(groups, ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class Denoiser(nn.Module):
    """Noise predictor for ``(channels, 32, 32)`` fused tensors.

    The condition is concatenated with the noisy input along channels. With
    ``conditional=False`` a learned null tensor of the condition's shape is
    used instead. ``n_positions`` > 1 adds a learned embedding of which
    target chunk is being generated.

    ``prediction="x0"`` makes the network body estimate the clean tensor; the
    forward pass still returns a noise estimate, derived from it through the
    forward-noising identity, so the sampler is unchanged.
    """

    def __init__(
        self,
        channels: int = 35,
        cond_channels: int = 35,
        width: int = 64,
        n_blocks: int = 4,
        emb_dim: int = 64,
        groups: int = 8,
        conditional: bool = True,
        n_positions: int = 1,
        canvas: int = 32,
        prediction: str = "eps",
        schedule: Optional[NoiseSchedule] = None,
    ) -> None:
        super().__init__()
        if prediction not in ("eps", "x0"):
            raise ValueError(f"prediction must be 'eps' or 'x0', got {prediction!r}")
        if prediction == "x0" and schedule is None:
            raise ValueError("x0 prediction needs the noise schedule")
        self.prediction = prediction
        if schedule is not None:
            self.register_buffer("alpha_bars", schedule.torch("alpha_bars", torch.float64))
        self.channels, self.cond_channels = channels, cond_channels
        self.emb_dim = emb_dim
        self.conditional = conditional
        self.time_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.position = nn.Embedding(n_positions, emb_dim)
        nn.init.zeros_(self.position.weight)
        if not conditional:
            self.null_cond = nn.Parameter(torch.zeros(cond_channels, canvas, canvas))
        self.inp = nn.Conv2d(channels + cond_channels, width, 3, padding=1)
        self.blocks = nn.ModuleList(ResBlock(width, emb_dim, groups) for _ in range(n_blocks))
        self.out_norm = nn.GroupNorm(groups, width)
        self.out = nn.Conv2d(width, channels, 1)
        self.to(memory_format=torch.channels_last)

    def forward(
        self,
        x: torch.Tensor,
        k: torch.Tensor,
        cond: Optional[torch.Tensor] = None,
        position: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Noise estimate for ``x`` at step ``k``."""
        out, k = self._body(x, k, cond, position)
        if self.prediction == "eps":
            return out
        a = _per_sample(self.alpha_bars.to(x.dtype), k, x.ndim)
        return (x - a.sqrt() * out) / (1.0 - a).sqrt()

    def predict_x0(self, x, k, cond=None, position=None) -> torch.Tensor:
        out, k = self._body(x, k, cond, position)
        if self.prediction == "x0":
            return out
        a = _per_sample(self.alpha_bars.to(x.dtype), k, x.ndim)
        return (x - (1.0 - a).sqrt() * out) / a.sqrt()

    def _body(self, x, k, cond, position):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected (B, {self.channels}, H, W) input, got {tuple(x.shape)}")
        B = x.shape[0]
        k = torch.as_tensor(k, dtype=torch.long)
        if k.ndim == 0:
            k = k.expand(B)
        if self.conditional:
            if cond is None or cond.shape[0] != B or cond.shape[1] != self.cond_channels:
                raise ValueError(
                    f"condition must be (B, {self.cond_channels}, H, W), got "
                    f"{None if cond is None else tuple(cond.shape)}"
                )
            if cond.shape[2:] != x.shape[2:]:
                raise ValueError("condition spatial shape differs from input")
        else:
            cond = self.null_cond.expand(B, -1, -1, -1)
        emb = timestep_embedding(k, self.emb_dim).to(x.dtype)
        if position is not None:
            emb = emb + self.position(position)
        emb = self.time_mlp(emb)
        # channels-last convolutions run noticeably faster on CPU
        h = self.inp(torch.cat([x, cond], dim=1).contiguous(memory_format=torch.channels_last))
        for block in self.blocks:
            h = block(h, emb)
        return self.out(F.silu(self.out_norm(h))).contiguous(), k


def masked_mse(a: torch.Tensor, b: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    sq = (a - b) ** 2
    if mask is None:
        return sq.mean()
    m = mask.to(sq.dtype).expand_as(sq)
    return (sq * m).sum() / m.sum()


def loss_eps(
    x0: torch.Tensor,
    cond: Optional[torch.Tensor],
    sched: NoiseSchedule,
    net: Callable,
    generator: torch.Generator,
    mask: Optional[torch.Tensor] = None,
    position: Optional[torch.Tensor] = None,
    return_parts: bool = False,
):
    """Masked noise-prediction loss at a uniformly drawn step per sample."""
    B = x0.shape[0]
    k = torch.randint(0, sched.K, (B,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_k = q_sample(x0, k, eps, sched)
    pred = net(x_k, k, cond, position)
    loss = masked_mse(eps, pred, mask)
    if return_parts:
        return loss, {"k": k, "eps": eps, "x_k": x_k, "pred": pred}
    return loss


def loss_x0(
    x0: torch.Tensor,
    cond: Optional[torch.Tensor],
    sched: NoiseSchedule,
    net: "Denoiser",
    generator: torch.Generator,
    mask: Optional[torch.Tensor] = None,
    position: Optional[torch.Tensor] = None,
):
    """Masked clean-tensor regression loss; returns ``(loss, x0_hat)``."""
    B = x0.shape[0]
    k = torch.randint(0, sched.K, (B,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_k = q_sample(x0, k, eps, sched)
    x0_hat = net.predict_x0(x_k, k, cond, position)
    return masked_mse(x0, x0_hat, mask), x0_hat


def predict_x0(x_k: torch.Tensor, k: torch.Tensor, eps_hat: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    a = _per_sample(sched.torch("alpha_bars", x_k.dtype), k, x_k.ndim)
    return (x_k - (1.0 - a).sqrt() * eps_hat) / a.sqrt()


@torch.no_grad()
def p_sample_loop(
    cond: Optional[torch.Tensor],
    sched: NoiseSchedule,
    net: Callable,
    generator: torch.Generator,
    shape: tuple,
    position: Optional[torch.Tensor] = None,
    x_start: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Ancestral sampling from ``x^K ~ N(0, I)`` down to ``x^0``.

    Uses the DDPM posterior mean computed from the predicted noise and
    ``sigma_k^2 = beta_k``; no noise is added on the last step.
    """
    dtype = torch.get_default_dtype() if x_start is None else x_start.dtype
    x = torch.randn(shape, generator=generator, dtype=dtype) if x_start is None else x_start
    betas = sched.betas
    abar = sched.alpha_bars
    B = shape[0]
    for k in range(sched.K - 1, -1, -1):
        kk = torch.full((B,), k, dtype=torch.long)
        eps_hat = net(x, kk, cond, position)
        coef = betas[k] / math.sqrt(1.0 - abar[k])
        mean = (x - coef * eps_hat) / math.sqrt(1.0 - betas[k])
        if k > 0:
            z = torch.randn(shape, generator=generator, dtype=dtype)
            x = mean + math.sqrt(betas[k]) * z
        else:
            x = mean
    return x
