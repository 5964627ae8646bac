"""Invertible series <-> image maps: delay embedding and STFT.

Both maps write onto a fixed 32x32 canvas. Columns that the input is too
short to fill are zero and marked invalid in ``valid_mask``; inversion
ignores them.

The batch functions (``*_batch``) operate on ``(B, L)`` arrays and are what
the forecasting pipeline uses; the single-series functions wrap them and
carry an :class:`ImageTensor` with its metadata.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .series import TimeSeries, as_array

CANVAS = 32


class TransformError(ValueError):
    pass


@dataclass
class ImageTensor:
    data: np.ndarray  # (C, H, W)
    valid_mask: np.ndarray  # (H, W) bool
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise TransformError(f"image data must be (C, H, W), got {self.data.shape}")
        if self.valid_mask.shape != self.data.shape[1:]:
            raise TransformError("valid_mask shape does not match image")

    @property
    def channels(self) -> int:
        return self.data.shape[0]


# --- delay embedding --------------------------------------------------------


def delay_starts(length: int, tau: int = 3, d: int = CANVAS) -> np.ndarray:
    """Start index of each delay column.

    Columns advance by ``tau``; when ``(length - d) % tau != 0`` a final
    column aligned to the series end is appended so every sample is encoded.
    """
    if length < d:
        raise TransformError(f"series length {length} shorter than embedding dim {d}")
    starts = list(range(0, length - d + 1, tau))
    if starts[-1] != length - d:
        starts.append(length - d)
    return np.asarray(starts)


def delay_columns(length: int, tau: int = 3, d: int = CANVAS) -> int:
    return len(delay_starts(length, tau, d))


def _delay_rows(length: int, tau: int, d: int) -> np.ndarray:
    return np.arange(d)[:, None] + delay_starts(length, tau, d)[None, :]


def delay_embed_batch(
    x: np.ndarray, tau: int = 3, d: int = CANVAS, width: int = CANVAS
) -> Tuple[np.ndarray, np.ndarray]:
    """``(B, L)`` -> images ``(B, d, width)`` and column mask ``(width,)``.

    Column ``j`` holds the ``d`` samples starting at ``delay_starts(...)[j]``.
    """
    x = np.asarray(x, dtype=np.float64)
    rows = _delay_rows(x.shape[-1], tau, d)
    q = rows.shape[1]
    if q > width:
        raise TransformError(
            f"{q} delay columns exceed the {width}-column canvas; split the series "
            f"into chunks of at most {d + (width - 1) * tau} samples"
        )
    img = np.zeros(x.shape[:-1] + (d, width))
    img[..., :q] = x[..., rows]
    cols = np.zeros(width, dtype=bool)
    cols[:q] = True
    return img, cols


def delay_invert_batch(img: np.ndarray, length: int, tau: int = 3) -> np.ndarray:
    """Average every valid cell that encodes each sample."""
    rows = _delay_rows(length, tau, img.shape[-2])
    counts = np.bincount(rows.ravel(), minlength=length)
    q = rows.shape[1]
    if q > img.shape[-1]:
        raise TransformError("image has fewer columns than the recorded geometry")
    cells = img[..., :q].reshape(img.shape[:-2] + (-1,))
    lead = cells.shape[:-1]
    onehot = np.zeros((cells.shape[-1], length))
    onehot[np.arange(cells.shape[-1]), rows.ravel()] = 1.0
    out = cells.reshape(-1, cells.shape[-1]) @ onehot
    return (out / counts).reshape(lead + (length,))


def delay_embed(x: TimeSeries | np.ndarray, tau: int = 3, d: int = CANVAS) -> ImageTensor:
    arr = as_array(x)
    img, cols = delay_embed_batch(arr[None], tau, d)
    mask = np.broadcast_to(cols, (d, CANVAS)).copy()
    meta = {"kind": "delay", "length": arr.shape[0], "tau": tau, "d": d,
            "columns": int(cols.sum())}
    return ImageTensor(data=img, valid_mask=mask, meta=meta)


def delay_embed_invert(img: ImageTensor) -> np.ndarray:
    meta = img.meta
    if meta.get("kind") != "delay":
        raise TransformError("image is not a delay embedding")
    length, tau = int(meta["length"]), int(meta["tau"])
    q = delay_columns(length, tau, img.data.shape[1])
    if q != int(meta.get("columns", q)) or not img.valid_mask[:, :q].all() or img.valid_mask[:, q:].any():
        raise TransformError("valid_mask disagrees with the recorded delay geometry")
    return delay_invert_batch(img.data[0][None], length, tau)[0]


# --- STFT -------------------------------------------------------------------


@dataclass(frozen=True)
class StftParams:
    """Frame length, hop and periodic Hann window.

    Spectra are divided by the window sum, so a constant signal ``c`` has a
    DC coefficient of ``c`` and a unit cosine at an exact bin gives 0.5.
    """

    n_fft: int = 64
    hop: int = 16

    def __post_init__(self) -> None:
        if self.n_fft % self.hop:
            raise ValueError("hop must divide n_fft")
        if self.n_fft // 2 > CANVAS:
            raise ValueError(f"n_fft/2 must fit the {CANVAS}-row canvas")

    @property
    def window(self) -> np.ndarray:
        n = np.arange(self.n_fft)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.n_fft)

    @property
    def scale(self) -> float:
        return float(self.window.sum())


def stft_frames(length: int, p: StftParams) -> int:
    if length < p.n_fft:
        raise TransformError(f"series length {length} shorter than n_fft {p.n_fft}")
    return (length - p.n_fft) // p.hop + 1


def _overlap_weight(length: int, p: StftParams) -> np.ndarray:
    w2 = p.window ** 2
    acc = np.zeros(length)
    for f in range(stft_frames(length, p)):
        acc[f * p.hop : f * p.hop + p.n_fft] += w2
    return acc


def stft_batch(
    x: np.ndarray, p: StftParams = StftParams(), width: int = CANVAS,
    pack_nyquist: bool = False,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(B, L)`` -> ``(B, 2, n_fft/2, width)`` real/imag images, Nyquist row
    ``(B, F)`` and column mask ``(width,)``.

    The imaginary part of the DC bin is identically zero for real input;
    ``pack_nyquist`` stores the (real) Nyquist coefficient in that cell so the
    image alone is exactly invertible.
    """
    x = np.asarray(x, dtype=np.float64)
    F = stft_frames(x.shape[-1], p)
    if F > width:
        raise TransformError(f"{F} STFT frames exceed the {width}-column canvas")
    starts = np.arange(F) * p.hop
    frames = x[..., starts[:, None] + np.arange(p.n_fft)[None, :]] * p.window
    spec = np.fft.rfft(frames, axis=-1) / p.scale  # (B, F, n_fft/2 + 1)
    half = p.n_fft // 2
    img = np.zeros(x.shape[:-1] + (2, half, width))
    img[..., 0, :, :F] = np.swapaxes(spec[..., :half].real, -1, -2)
    img[..., 1, :, :F] = np.swapaxes(spec[..., :half].imag, -1, -2)
    if pack_nyquist:
        img[..., 1, 0, :F] = spec[..., half].real
    cols = np.zeros(width, dtype=bool)
    cols[:F] = True
    return img, spec[..., half].real, cols


def istft_batch(
    img: np.ndarray,
    length: int,
    p: StftParams = StftParams(),
    nyquist: Optional[np.ndarray] = None,
    pack_nyquist: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted overlap-add inverse. Returns ``(x, covered)`` where
    ``covered`` flags samples with nonzero summed squared window; the others
    are left at zero for the caller to fill."""
    F = stft_frames(length, p)
    half = p.n_fft // 2
    lead = img.shape[:-3]
    spec = np.zeros(lead + (F, half + 1), dtype=np.complex128)
    spec[..., :half] = np.swapaxes(img[..., 0, :, :F] + 1j * img[..., 1, :, :F], -1, -2)
    if pack_nyquist:
        spec[..., 0] = spec[..., 0].real
        spec[..., half] = img[..., 1, 0, :F]
    elif nyquist is not None:
        spec[..., half] = nyquist
    frames = np.fft.irfft(spec * p.scale, n=p.n_fft, axis=-1)  # windowed frames
    w = p.window
    acc = np.zeros(lead + (length,))
    for f in range(F):
        acc[..., f * p.hop : f * p.hop + p.n_fft] += frames[..., f, :] * w
    weight = _overlap_weight(length, p)
    covered = weight > 1e-6 * weight.max()
    out = np.zeros_like(acc)
    out[..., covered] = acc[..., covered] / weight[covered]
    return out, covered


def stft(x: TimeSeries | np.ndarray, p: StftParams = StftParams()) -> ImageTensor:
    arr = as_array(x)
    img, nyq, cols = stft_batch(arr[None], p)
    weight = _overlap_weight(arr.shape[0], p)
    uncovered = np.flatnonzero(weight <= 1e-6 * weight.max())
    meta = {
        "kind": "stft", "length": arr.shape[0], "n_fft": p.n_fft, "hop": p.hop,
        "frames": int(cols.sum()), "nyquist": nyq[0],
        "edge": {int(i): float(arr[i]) for i in uncovered},
    }
    mask = np.broadcast_to(cols, (p.n_fft // 2, CANVAS)).copy()
    return ImageTensor(data=img[0], valid_mask=mask, meta=meta)


def istft(img: ImageTensor) -> np.ndarray:
    """Invert :func:`stft`.

    Samples no frame reaches with nonzero weight come from ``meta['edge']``
    when present, otherwise from the nearest recovered sample.
    """
    meta = img.meta
    if meta.get("kind") != "stft":
        raise TransformError("image is not an STFT record")
    if "length" not in meta or "nyquist" not in meta:
        raise TransformError("STFT meta lacks length or stored Nyquist row")
    p = StftParams(n_fft=int(meta["n_fft"]), hop=int(meta["hop"]))
    length = int(meta["length"])
    out, covered = istft_batch(img.data[None], length, p, np.asarray(meta["nyquist"])[None])
    out = out[0]
    edge = meta.get("edge") or {}
    for i in np.flatnonzero(~covered):
        if int(i) in edge:
            out[i] = edge[int(i)]
        else:
            j = np.flatnonzero(covered)
            out[i] = out[j[np.argmin(np.abs(j - i))]]
    return out


# --- debug dumps --------------------------------------------------------------


def image_to_csv(img: ImageTensor | np.ndarray, path) -> None:
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "row", "col", "value"])
        for c, r, k in np.ndindex(*data.shape):
            w.writerow([c, r, k, repr(float(data[c, r, k]))])


def image_to_svg(img: ImageTensor | np.ndarray, path, channel: int = 0, cell: int = 8) -> None:
    """Grayscale heatmap of one channel, min-max scaled."""
    data = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    plane = data[channel]
    lo, hi = float(plane.min()), float(plane.max())
    span = hi - lo if hi > lo else 1.0
    h, w = plane.shape
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" height="{h * cell}">'
    ]
    for r in range(h):
        for c in range(w):
            g = int(round(255 * (plane[r, c] - lo) / span))
            parts.append(
                f'<rect x="{c * cell}" y="{r * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({g},{g},{g})"/>'
            )
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
