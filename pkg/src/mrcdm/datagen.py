"""Synthetic ETT-like hourly load series.

Random numbers come from SplitMix64 so the stream is reproducible from the
seed in any language: output ``i`` (0-based) is ``mix(seed + (i+1)*G)`` with
``G = 0x9E3779B97F4A7C15`` and the standard SplitMix64 finalizer. Uniform
doubles are ``(z >> 11) * 2**-53``; normals use Box-Muller on consecutive
pairs (``u1`` shifted into (0, 1]).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from .series import TimeSeries

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = np.uint64(seed % 2**64)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = self.state + i * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        raw = self.next_u64(2 * m) >> np.uint64(11)
        u1 = (raw[0::2].astype(np.float64) + 1.0) * 2.0**-53
        u2 = raw[1::2].astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings. Amplitudes are in pre-rescale units; only their
    ratios matter because the output is rescaled to ``target_mean/std``."""

    n_points: int = 17420
    seed: int = 42
    target_mean: float = 2.9
    target_std: float = 1.2
    amp_daily: float = 1.0
    amp_weekly: float = 0.5
    trend_slope: float = 5e-5
    noise_std: float = 0.2
    daytime_boost: float = 1.2
    drop_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.n_points < 1000:
            raise ValueError("n_points must be at least 1000")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.daytime_boost < 1:
            raise ValueError("daytime_boost must be >= 1")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError("drop_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _rescale(x: np.ndarray, mean: float, std: float) -> np.ndarray:
    sd = x.std()
    if sd == 0.0:
        return np.full_like(x, mean)
    return (x - x.mean()) / sd * std + mean


def _clean_signal(cfg: SynthConfig, rng: SplitMix64) -> np.ndarray:
    phase_d, phase_w = 2.0 * np.pi * rng.uniform(2)
    t = np.arange(cfg.n_points, dtype=np.float64)
    hour = t % 24
    boost = np.where((hour >= 8) & (hour < 20), cfg.daytime_boost, 1.0)
    seasonal = (
        cfg.amp_daily * np.sin(2.0 * np.pi * t / 24.0 + phase_d)
        + cfg.amp_weekly * np.sin(2.0 * np.pi * t / 168.0 + phase_w)
        + cfg.trend_slope * t
    )
    return boost * seasonal


def synthesize(cfg: SynthConfig = SynthConfig()) -> TimeSeries:
    rng = SplitMix64(cfg.seed)
    x = _clean_signal(cfg, rng) + cfg.noise_std * rng.normal(cfg.n_points)
    x = _rescale(x, cfg.target_mean, cfg.target_std)
    observed = np.ones(cfg.n_points, dtype=bool)
    if cfg.drop_rate > 0:
        observed = rng.uniform(cfg.n_points) >= cfg.drop_rate
        x = np.where(observed, x, np.nan)
    return TimeSeries(values=x, observed=observed)


def synthesize_correlated(
    cfg: SynthConfig, k_extra: int, rho: float
) -> List[TimeSeries]:
    """Base series followed by ``k_extra`` channels correlated with it at ``rho``.

    Extras are ``rho * z + sqrt(1 - rho**2) * e`` with ``z`` the standardized
    base and ``e`` independent unit noise, rescaled like the base.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    base = synthesize(cfg.__class__(**{**cfg.to_dict(), "drop_rate": 0.0}))
    z = _rescale(base.values, 0.0, 1.0)
    # offset the stream so extras never reuse the base's draws
    rng = SplitMix64(cfg.seed)
    rng.counter = 2 + 2 * cfg.n_points
    out = [base]
    for _ in range(k_extra):
        e = rng.normal(cfg.n_points)
        extra = rho * z + np.sqrt(1.0 - rho * rho) * e
        out.append(TimeSeries(values=_rescale(extra, cfg.target_mean, cfg.target_std)))
    return out
