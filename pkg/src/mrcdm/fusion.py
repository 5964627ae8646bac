"""Channel lifting and concatenation of the per-component images.

Each component image (1 native channel for delay embeddings, 2 for the
real/imag STFT) is mapped by a learnable per-pixel linear lift to its block
of the fused tensor. The default layout is::

    trend1   channels  0..7    (delay, 1 -> 7)
    trend2   channels  7..14   (delay, 1 -> 7)
    trend3   channels 14..28   (STFT,  2 -> 14)
    residual channels 28..35   (delay, 1 -> 7)

The lift is a 1x1 convolution whose weight starts as an identity block (first
output channel of each native channel copies it) plus N(0, 0.02^2) entries
elsewhere. Blocks are inverted with the Moore-Penrose pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import torch
from torch import nn

BlockSpec = Tuple[str, int, int]  # (name, native channels, lifted channels)

FULL_BLOCKS: Tuple[BlockSpec, ...] = (
    ("trend1", 1, 7),
    ("trend2", 1, 7),
    ("trend3", 2, 14),
    ("residual", 1, 7),
)


class FusionError(ValueError):
    pass


def layout_of(blocks: Sequence[BlockSpec], lifted: bool = True) -> Dict[str, Tuple[int, int]]:
    """Channel range of each block in the fused tensor."""
    out, start = {}, 0
    for name, native, declared in blocks:
        width = declared if lifted else native
        out[name] = (start, start + width)
        start += width
    return out


@dataclass
class FusedTensor:
    data: torch.Tensor  # (..., C, H, W)
    layout: Dict[str, Tuple[int, int]]
    mask: torch.Tensor  # (C, H, W) bool

    @property
    def channels(self) -> int:
        return self.data.shape[-3]

    def block(self, name: str) -> torch.Tensor:
        a, b = self.layout[name]
        return self.data[..., a:b, :, :]

    def zero_block(self, name: str) -> "FusedTensor":
        a, b = self.layout[name]
        data = self.data.clone()
        data[..., a:b, :, :] = 0.0
        return FusedTensor(data, dict(self.layout), self.mask)


class ChannelLift(nn.Module):
    """Per-pixel affine map from ``native`` to ``declared`` channels."""

    def __init__(
        self,
        native: int,
        declared: int,
        generator: torch.Generator | None = None,
        init_std: float = 0.02,
        bias: bool = True,
    ) -> None:
        super().__init__()
        if declared < native:
            raise FusionError("a lift cannot reduce the channel count")
        self.native, self.declared = native, declared
        reps = declared // native
        weight = init_std * torch.randn(declared, native, generator=generator)
        # output channel i*reps copies native channel i
        for i in range(native):
            weight[i * reps] = 0.0
            weight[i * reps, i] = 1.0
        self.weight = nn.Parameter(weight)
        self.bias = nn.Parameter(torch.zeros(declared)) if bias else None
        self.register_buffer("col_norms", weight.norm(dim=0).clone())

    def forward(self, x: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[-3] != self.native:
            raise FusionError(
                f"lift expects {self.native} native channels, got {x.shape[-3]}"
            )
        y = torch.einsum("oc,...chw->...ohw", self.weight, x)
        if self.bias is not None:
            b = self.bias[:, None, None]
            y = y + (b * valid.to(y.dtype) if valid is not None else b)
        return y

    def invert(self, y: torch.Tensor) -> torch.Tensor:
        """Least-squares native channels for lifted ``y`` (bias removed)."""
        if self.bias is not None:
            y = y - self.bias[:, None, None]
        pinv = torch.linalg.pinv(self.weight)
        return torch.einsum("co,...ohw->...chw", pinv, y)

    @torch.no_grad()
    def project_(self) -> None:
        """Rescale weight columns back to their initial norms.

        Keeps the lifted signal's scale fixed while training so the
        denoising objective cannot shrink it.
        """
        norms = self.weight.norm(dim=0).clamp_min(1e-12)
        self.weight.mul_(self.col_norms / norms)


def lift_channels(
    img: torch.Tensor, lift: ChannelLift, valid: torch.Tensor | None = None
) -> torch.Tensor:
    """Apply ``lift`` and keep masked cells at exactly zero."""
    out = lift(img, valid)
    if valid is not None:
        out = out * valid.to(out.dtype)
    return out


class Fuser(nn.Module):
    """Holds one lift per block (or none for plain concatenation)."""

    def __init__(
        self,
        blocks: Sequence[BlockSpec] = FULL_BLOCKS,
        lifted: bool = True,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.blocks = tuple(blocks)
        self.lifted = lifted
        self.layout = layout_of(self.blocks, lifted)
        self.native_layout = layout_of(self.blocks, lifted=False)
        self.lifts = nn.ModuleDict()
        if lifted:
            for name, native, declared in self.blocks:
                self.lifts[name] = ChannelLift(native, declared, generator)

    @property
    def channels(self) -> int:
        return max(b for _, b in self.layout.values())

    @property
    def native_channels(self) -> int:
        return max(b for _, b in self.native_layout.values())

    def channel_mask(self, block_masks: Mapping[str, torch.Tensor]) -> torch.Tensor:
        parts = []
        for name, _, _ in self.blocks:
            a, b = self.layout[name]
            parts.append(block_masks[name].expand(b - a, -1, -1))
        return torch.cat(parts, dim=0)

    def fuse(
        self, images: Mapping[str, torch.Tensor], block_masks: Mapping[str, torch.Tensor]
    ) -> FusedTensor:
        missing = [name for name, _, _ in self.blocks if name not in images]
        if missing:
            raise FusionError(f"missing component image(s): {', '.join(missing)}")
        parts = []
        for name, native, _ in self.blocks:
            img = images[name]
            if img.shape[-3] != native:
                raise FusionError(
                    f"{name}: expected {native} native channels, got {img.shape[-3]}"
                )
            if self.lifted:
                img = lift_channels(img, self.lifts[name], block_masks[name])
            parts.append(img)
        data = torch.cat(parts, dim=-3)
        return FusedTensor(data, dict(self.layout), self.channel_mask(block_masks))

    def defuse(self, fused: FusedTensor) -> Dict[str, torch.Tensor]:
        """Slice the fused tensor back into (lifted) component blocks."""
        return {name: fused.block(name) for name, _, _ in self.blocks}

    def to_native(self, fused: FusedTensor) -> Dict[str, torch.Tensor]:
        """Collapse every block to its native channels."""
        blocks = self.defuse(fused)
        if not self.lifted:
            return blocks
        out = {}
        for name, t in blocks.items():
            a, _ = self.layout[name]
            valid = fused.mask[a].to(t.dtype)
            out[name] = self.lifts[name].invert(t) * valid
        return out

    def project_(self) -> None:
        for lift in self.lifts.values():
            lift.project_()

    def layout_table(self) -> List[dict]:
        return [
            {"component": name, "native": native, "channels": list(self.layout[name])}
            for name, native, _ in self.blocks
        ]
