"""Forecasting model: window codec, conditional denoiser and reconstructor.

Windows longer than one chunk (``chunk_len`` samples, 96 by default) are
split into chunks that are encoded independently; shorter windows are
edge-padded up to a chunk (history on the left, targets on the right). Each
target chunk is generated jointly as one fused tensor, conditioned on all
history chunks stacked along channels, with a learned embedding telling the
denoiser which target chunk it is producing.

The trend3 component is edge-padded by ``n_fft - hop`` samples on both
sides before the STFT so every kept sample is covered by the full set of
overlapping frames; the padding is cropped after inversion.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .decomposition import COMPONENT_NAMES, DEFAULT_WINDOWS, decompose
from .diffusion import (
    Denoiser,
    NoiseSchedule,
    loss_eps,
    loss_x0,
    make_linear_schedule,
    masked_mse,
    p_sample_loop,
    predict_x0,
)
from .fusion import FULL_BLOCKS, Fuser, FusedTensor
from .reconstructor import Reconstructor
from .series import stack_windows
from .transforms import (
    CANVAS,
    StftParams,
    delay_columns,
    delay_embed_batch,
    delay_invert_batch,
    istft_batch,
    stft_batch,
    stft_frames,
)

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 96
    horizon: int = 96
    chunk_len: int = 96
    windows: Tuple[int, int, int] = DEFAULT_WINDOWS
    tau: int = 3
    embed_dim: int = CANVAS
    n_fft: int = 64
    hop: int = 16
    # ablation switches; every named variant flips exactly one of these
    decompose: bool = True
    conditional: bool = True
    lifted: bool = True
    drop_components: Tuple[str, ...] = ()
    # denoiser
    width: int = 64
    n_blocks: int = 4
    emb_dim: int = 64
    groups: int = 8
    # diffusion
    K: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    prediction: str = "x0"
    recon_weight: float = 1.0
    # subtract each window's history mean before encoding, add it back after
    center: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        object.__setattr__(self, "drop_components", tuple(self.drop_components))
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> List[str]:
        errs = []
        if self.seq_len < 1:
            errs.append("seq_len: must be positive")
        if self.horizon < 1:
            errs.append("horizon: must be positive")
        if self.chunk_len < max(self.windows[-1], self.n_fft):
            errs.append("chunk_len: shorter than the largest window or n_fft")
        elif delay_columns(self.chunk_len, self.tau, self.embed_dim) > CANVAS:
            errs.append("chunk_len: too many delay columns for the canvas")
        unknown = set(self.drop_components) - set(COMPONENT_NAMES)
        if unknown:
            errs.append(f"drop_components: unknown {sorted(unknown)}")
        if self.drop_components and not self.decompose:
            errs.append("drop_components: requires decompose=True")
        return errs

    @property
    def stft_pad(self) -> int:
        return self.n_fft - self.hop

    @property
    def history_chunks(self) -> int:
        return math.ceil(self.seq_len / self.chunk_len)

    @property
    def target_chunks(self) -> int:
        return math.ceil(self.horizon / self.chunk_len)

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.K, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["windows"] = list(self.windows)
        d["drop_components"] = list(self.drop_components)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["windows"] = tuple(d.get("windows", DEFAULT_WINDOWS))
        d["drop_components"] = tuple(d.get("drop_components", ()))
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    clip_norm: float = 1.0
    train_stride: int = 25
    seed: int = 42

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --- codec -------------------------------------------------------------------


class WindowCodec:
    """Numpy side of the encoder: chunking, decomposition, image transforms,
    and the matching exact inverse maps."""

    def __init__(self, cfg: ModelConfig) -> None:
        self.cfg = cfg
        self.stft = StftParams(cfg.n_fft, cfg.hop)
        C = cfg.chunk_len
        if cfg.decompose:
            self.blocks = FULL_BLOCKS
        else:
            self.blocks = (("raw", 1, sum(b[2] for b in FULL_BLOCKS)),)
        self.kinds = {name: ("stft" if name == "trend3" else "delay") for name, _, _ in self.blocks}
        q = delay_columns(C, cfg.tau, cfg.embed_dim)
        F = stft_frames(C + 2 * cfg.stft_pad, self.stft)
        cols = {"delay": q, "stft": F}
        rows = {"delay": cfg.embed_dim, "stft": cfg.n_fft // 2}
        self.block_masks = {}
        for name, _, _ in self.blocks:
            m = np.zeros((CANVAS, CANVAS), dtype=bool)
            m[: rows[self.kinds[name]], : cols[self.kinds[name]]] = True
            self.block_masks[name] = m

    def chunk(self, x: np.ndarray, role: str) -> np.ndarray:
        """``(B, L)`` -> ``(B, m, chunk_len)`` with edge padding."""
        x = np.asarray(x, dtype=np.float64)
        C = self.cfg.chunk_len
        m = max(1, math.ceil(x.shape[-1] / C))
        extra = m * C - x.shape[-1]
        if role == "history":
            x = np.pad(x, ((0, 0), (extra, 0)), mode="edge")
        elif role == "target":
            x = np.pad(x, ((0, 0), (0, extra)), mode="edge")
        else:
            raise ValueError(f"unknown role {role!r}")
        return x.reshape(x.shape[0], m, C)

    def components(self, chunks: np.ndarray) -> Dict[str, np.ndarray]:
        if not self.cfg.decompose:
            return {"raw": chunks}
        comps = decompose(chunks, self.cfg.windows).as_dict()
        for name in self.cfg.drop_components:
            comps[name] = np.zeros_like(comps[name])
        return comps

    def image(self, name: str, series: np.ndarray) -> np.ndarray:
        """Native image ``(..., c, 32, 32)`` for one component."""
        lead = series.shape[:-1]
        flat = series.reshape(-1, series.shape[-1])
        if self.kinds[name] == "delay":
            img, _ = delay_embed_batch(flat, self.cfg.tau, self.cfg.embed_dim)
            img = img[:, None]
        else:
            p = self.cfg.stft_pad
            padded = np.pad(flat, ((0, 0), (p, p)), mode="edge")
            img, _, _ = stft_batch(padded, self.stft, pack_nyquist=True)
        return img.reshape(lead + img.shape[1:])

    def encode(self, x: np.ndarray, role: str) -> Dict[str, np.ndarray]:
        comps = self.components(self.chunk(x, role))
        return {name: self.image(name, comps[name]) for name, _, _ in self.blocks}

    def inverse_matrix(self, name: str) -> np.ndarray:
        """``(c*32*32, chunk_len)`` matrix applying the exact inverse transform."""
        C = self.cfg.chunk_len
        native = dict((n, c) for n, c, _ in self.blocks)[name]
        n_cells = native * CANVAS * CANVAS
        basis = np.eye(n_cells).reshape(n_cells, native, CANVAS, CANVAS)
        if self.kinds[name] == "delay":
            return delay_invert_batch(basis[:, 0], C, self.cfg.tau)
        p = self.cfg.stft_pad
        out, _ = istft_batch(basis, C + 2 * p, self.stft, pack_nyquist=True)
        return out[:, p : p + C]

    def decode(self, native: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Native images ``(..., c, 32, 32)`` -> component series ``(..., C)``."""
        out = {}
        for name, img in native.items():
            flat = img.reshape(img.shape[:-3] + (-1,))
            out[name] = flat @ self.inverse_matrix(name)
        return out


# --- model -------------------------------------------------------------------


class MRCDM(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 42) -> None:
        super().__init__()
        self.cfg = cfg
        self.codec = WindowCodec(cfg)
        self.schedule = cfg.schedule()
        gen = torch.Generator().manual_seed(seed)
        torch.manual_seed(seed)
        self.fuser = Fuser(self.codec.blocks, lifted=cfg.lifted, generator=gen)
        Cf = self.fuser.channels
        self.denoiser = Denoiser(
            channels=Cf,
            cond_channels=Cf * cfg.history_chunks,
            width=cfg.width,
            n_blocks=cfg.n_blocks,
            emb_dim=cfg.emb_dim,
            groups=cfg.groups,
            conditional=cfg.conditional,
            n_positions=cfg.target_chunks,
            prediction=cfg.prediction,
            schedule=self.schedule,
        )
        paths = [(name, native) for name, native, _ in self.codec.blocks]
        inverses = {
            name: torch.as_tensor(self.codec.inverse_matrix(name), dtype=torch.get_default_dtype())
            for name, _ in paths
        }
        self.reconstructor = Reconstructor(paths, inverses, dim=cfg.emb_dim)
        for name, m in self.codec.block_masks.items():
            self.register_buffer(f"mask_{name}", torch.as_tensor(m))

    # -- helpers --

    @property
    def block_masks(self) -> Dict[str, torch.Tensor]:
        return {name: getattr(self, f"mask_{name}") for name, _, _ in self.codec.blocks}

    def native_tensors(self, x: np.ndarray, role: str) -> Dict[str, torch.Tensor]:
        dtype = torch.get_default_dtype()
        return {k: torch.as_tensor(v, dtype=dtype) for k, v in self.codec.encode(x, role).items()}

    def fuse(self, native: Dict[str, torch.Tensor]) -> FusedTensor:
        return self.fuser.fuse(native, self.block_masks)

    def condition(self, hist_native: Dict[str, torch.Tensor]) -> torch.Tensor:
        fused = self.fuse(hist_native).data  # (B, m, Cf, H, W)
        return fused.flatten(1, 2)

    def to_native(self, fused: torch.Tensor) -> Dict[str, torch.Tensor]:
        ft = FusedTensor(fused, dict(self.fuser.layout), self.fuser.channel_mask(self.block_masks))
        return self.fuser.to_native(ft)

    def reconstruct(self, fused: torch.Tensor):
        """Fused chunks ``(N, Cf, H, W)`` -> ``(forecast, components, weights)``."""
        return self.reconstructor(self.to_native(fused), self.block_masks)

    # -- training objective --

    def training_loss(
        self,
        hist_native: Dict[str, torch.Tensor],
        tgt_native: Dict[str, torch.Tensor],
        tgt_chunks: torch.Tensor,
        generator: torch.Generator,
    ) -> Tuple[torch.Tensor, Dict[str, float]]:
        cfg = self.cfg
        B, m = tgt_chunks.shape[:2]
        cond = self.condition(hist_native).repeat_interleave(m, dim=0)
        with torch.no_grad():
            target = self.fuse(tgt_native)
        x0 = target.data.flatten(0, 1)
        position = torch.arange(m).repeat(B)
        if cfg.prediction == "eps":
            loss, parts = loss_eps(
                x0, cond, self.schedule, self.denoiser, generator,
                mask=target.mask, position=position, return_parts=True,
            )
            x0_hat = predict_x0(parts["x_k"], parts["k"], parts["pred"], self.schedule)
        else:
            loss, x0_hat = loss_x0(
                x0, cond, self.schedule, self.denoiser, generator,
                mask=target.mask, position=position,
            )
        stats = {f"loss_{cfg.prediction}": float(loss.detach())}
        if cfg.recon_weight > 0:
            x0_hat = x0_hat * target.mask.to(x0_hat.dtype)
            pred, comps, _ = self.reconstruct(x0_hat)
            with torch.no_grad():
                true_comps = self.reconstructor.invert_components(self.to_native(x0))
            valid = (torch.arange(m * cfg.chunk_len) < cfg.horizon).reshape(1, m, -1)
            valid = valid.expand(B, -1, -1).flatten(0, 1)
            rec = masked_mse(pred, tgt_chunks.flatten(0, 1), valid)
            # per-component series error: the image loss alone barely weights
            # the few STFT cells that carry trend3
            comp = masked_mse(comps, true_comps, valid[:, None, :])
            stats["loss_recon"] = float(rec.detach())
            stats["loss_components"] = float(comp.detach())
            loss = loss + cfg.recon_weight * (rec + comp)
        stats["loss"] = float(loss.detach())
        return loss, stats

    # -- inference --

    @torch.no_grad()
    def sample(self, history: np.ndarray, n_samples: int, generator: torch.Generator) -> torch.Tensor:
        """Fused samples ``(B, n_samples, m, Cf, H, W)``."""
        cfg = self.cfg
        B, m = history.shape[0], cfg.target_chunks
        cond = self.condition(self.native_tensors(history, "history"))
        reps = n_samples * m
        cond = cond.repeat_interleave(reps, dim=0)
        position = torch.arange(m).repeat(B * n_samples)
        shape = (B * reps, self.fuser.channels, CANVAS, CANVAS)
        out = p_sample_loop(cond, self.schedule, self.denoiser, generator, shape, position)
        return out.reshape(B, n_samples, m, *shape[1:])

    @torch.no_grad()
    def forecast(
        self,
        history: np.ndarray,
        n_samples: int = 8,
        generator: Optional[torch.Generator] = None,
        batch_size: int = 64,
    ) -> np.ndarray:
        """Mean over ``n_samples`` reconstructed samples, ``(B, horizon)``."""
        cfg = self.cfg
        history = np.atleast_2d(np.asarray(history, dtype=np.float64))
        if history.shape[1] != cfg.seq_len:
            raise ValueError(f"history length {history.shape[1]} != seq_len {cfg.seq_len}")
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        per_call = max(1, batch_size // (n_samples * cfg.target_chunks))
        preds = []
        for i in range(0, history.shape[0], per_call):
            h = history[i : i + per_call]
            off = window_offset(cfg, h)
            fused = self.sample(h - off, n_samples, generator)
            B = h.shape[0]
            y, _, _ = self.reconstruct(fused.flatten(0, 2))
            y = y.reshape(B, n_samples, -1)[..., : cfg.horizon]
            preds.append(y.mean(dim=1).double().numpy() + off)
        return np.concatenate(preds, axis=0)


# --- training ------------------------------------------------------------------


@dataclass
class TrainingData:
    hist: Dict[str, torch.Tensor]
    tgt: Dict[str, torch.Tensor]
    tgt_chunks: torch.Tensor

    def __len__(self) -> int:
        return self.tgt_chunks.shape[0]

    def batch(self, idx: torch.Tensor):
        return (
            {k: v[idx] for k, v in self.hist.items()},
            {k: v[idx] for k, v in self.tgt.items()},
            self.tgt_chunks[idx],
        )


def window_offset(cfg: ModelConfig, history: np.ndarray) -> np.ndarray:
    """Per-window level removed before encoding, ``(B, 1)``."""
    if not cfg.center:
        return np.zeros((history.shape[0], 1))
    return history.mean(axis=1, keepdims=True)


def training_data(model: MRCDM, series: np.ndarray, stride: int) -> TrainingData:
    cfg = model.cfg
    hist, tgt = stack_windows(series, cfg.seq_len, cfg.horizon, stride)
    off = window_offset(cfg, hist)
    hist, tgt = hist - off, tgt - off
    chunks = model.codec.chunk(tgt, "target")
    return TrainingData(
        hist=model.native_tensors(hist, "history"),
        tgt=model.native_tensors(tgt, "target"),
        tgt_chunks=torch.as_tensor(chunks, dtype=torch.get_default_dtype()),
    )


def train(
    model: MRCDM,
    series: np.ndarray,
    tcfg: TrainConfig = TrainConfig(),
    callback: Optional[Callable[[dict], None]] = None,
) -> List[dict]:
    """Adam training on sliding windows of a normalized series.

    Returns one record per epoch with the mean total, noise and
    reconstruction losses.
    """
    data = training_data(model, np.asarray(series, dtype=np.float64), tcfg.train_stride)
    gen = torch.Generator().manual_seed(tcfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr)
    trace = []
    model.train()
    for epoch in range(1, tcfg.epochs + 1):
        order = torch.randperm(len(data), generator=gen)
        sums: Dict[str, float] = {}
        n_batches = 0
        for start in range(0, len(data), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            loss, stats = model.training_loss(*data.batch(idx), generator=gen)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, window indices {idx.tolist()}: {stats}"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.clip_norm)
            opt.step()
            model.fuser.project_()
            for key, val in stats.items():
                sums[key] = sums.get(key, 0.0) + val
            n_batches += 1
        record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        trace.append(record)
        log.debug("epoch %d %s", epoch, record)
        if callback is not None:
            callback(record)
    model.eval()
    return trace
