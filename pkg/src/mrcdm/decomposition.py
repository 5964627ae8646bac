"""Multi-scale moving-average trend decomposition.

Three centred moving averages (windows 5, 25, 51 by default) are taken on
the raw input and differenced into bands, so the four parts always add back
to the input:

    residual = x   - MA5
    trend1   = MA5 - MA25
    trend2   = MA25 - MA51
    trend3   = MA51
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .series import TimeSeries, as_array

DEFAULT_WINDOWS: Tuple[int, int, int] = (5, 25, 51)
COMPONENT_NAMES: Tuple[str, str, str, str] = ("trend1", "trend2", "trend3", "residual")


@dataclass(frozen=True)
class TrendComponents:
    trend1: np.ndarray
    trend2: np.ndarray
    trend3: np.ndarray
    residual: np.ndarray
    windows: Tuple[int, ...] = DEFAULT_WINDOWS

    def __post_init__(self) -> None:
        n = {np.shape(getattr(self, k)) for k in COMPONENT_NAMES}
        if len(n) != 1:
            raise ValueError(f"component shapes differ: {n}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in COMPONENT_NAMES}

    def stack(self) -> np.ndarray:
        """Components as a ``(4, ..., L)`` array in canonical order."""
        return np.stack([getattr(self, k) for k in COMPONENT_NAMES])

    def zeroed(self, *names: str) -> "TrendComponents":
        parts = self.as_dict()
        for name in names:
            parts[name] = np.zeros_like(parts[name])
        return TrendComponents(**parts, windows=self.windows)


def moving_average(x: TimeSeries | np.ndarray, w: int) -> np.ndarray:
    """Centred mean over ``w`` samples with edge-replicate padding.

    Works along the last axis, so a batch ``(B, L)`` is averaged row-wise.
    """
    arr = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    L = arr.shape[-1]
    if w < 1 or w % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {w}")
    if w > L:
        raise ValueError(f"window {w} exceeds series length {L}")
    half = (w - 1) // 2
    pad = [(0, 0)] * (arr.ndim - 1) + [(half, half)]
    padded = np.pad(arr, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, w, axis=-1)
    return windows.mean(axis=-1)


def decompose(
    x: TimeSeries | np.ndarray, windows: Sequence[int] = DEFAULT_WINDOWS
) -> TrendComponents:
    arr = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    windows = tuple(int(w) for w in windows)
    if len(windows) != 3 or list(windows) != sorted(windows):
        raise ValueError(f"expected three increasing windows, got {windows}")
    if arr.shape[-1] < windows[-1]:
        raise ValueError(
            f"series length {arr.shape[-1]} shorter than largest window {windows[-1]}"
        )
    m_fine, m_mid, m_coarse = (moving_average(arr, w) for w in windows)
    return TrendComponents(
        trend1=m_fine - m_mid,
        trend2=m_mid - m_coarse,
        trend3=m_coarse,
        residual=arr - m_fine,
        windows=windows,
    )


def recompose(c: TrendComponents) -> np.ndarray:
    # (residual + trend1) cancels MA5 first, keeping the sum tight in float64
    return ((c.residual + c.trend1) + c.trend2) + c.trend3


def components_to_csv(c: TrendComponents, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *COMPONENT_NAMES])
        for t, row in enumerate(zip(*(as_array(getattr(c, k)) for k in COMPONENT_NAMES))):
            w.writerow([t, *(repr(float(v)) for v in row)])
