"""Hierarchical reconstruction of a forecast from a fused image tensor.

Pipeline per generated chunk: lifted blocks -> native channels (pseudo-
inverse) -> per-component series (fixed linear inverse transforms) -> one
pooled feature token per component -> single-head cross-scale attention ->
softmax scale weights -> weighted sum ``sum_s P * w_s * component_s``.

With the attention output projection and the weight head at their zero
initialisation the weights are uniform and the result is the plain sum of
the components.
"""

from __future__ import annotations

import math
from typing import Dict, Mapping, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn


class CrossScaleAttention(nn.Module):
    """Single-head scaled dot-product attention over path tokens with a
    residual connection; the output projection starts at zero."""

    def __init__(self, dim: int = 64) -> None:
        super().__init__()
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.proj = nn.Linear(dim, dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)
        self.scale = 1.0 / math.sqrt(dim)

    def attention(self, tokens: torch.Tensor) -> torch.Tensor:
        scores = self.q(tokens) @ self.k(tokens).transpose(-1, -2) * self.scale
        return scores.softmax(dim=-1)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        attn = self.attention(tokens)
        return tokens + self.proj(attn @ self.v(tokens))


def adaptive_combine(components: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """``components (..., P, L)``, ``weights (..., P)`` on the simplex."""
    P = components.shape[-2]
    return (P * weights[..., None] * components).sum(dim=-2)


class Reconstructor(nn.Module):
    """Maps native component images to a forecast chunk.

    ``inverses`` maps each path name to a ``(cells, length)`` matrix that
    applies the exact inverse image transform to a flattened native image.
    """

    def __init__(
        self,
        paths: Sequence[Tuple[str, int]],
        inverses: Mapping[str, torch.Tensor],
        dim: int = 64,
    ) -> None:
        super().__init__()
        self.paths = tuple(paths)
        for name, _ in self.paths:
            self.register_buffer(f"inv_{name}", inverses[name].clone())
        self.features = nn.ModuleDict(
            {name: nn.Conv2d(native, dim, 1) for name, native in self.paths}
        )
        self.attend = CrossScaleAttention(dim)
        self.weight_head = nn.Linear(dim, 1)
        nn.init.zeros_(self.weight_head.weight)
        nn.init.zeros_(self.weight_head.bias)

    def invert_components(self, native: Mapping[str, torch.Tensor]) -> torch.Tensor:
        """``(N, P, L)`` component series from native images ``(N, c, H, W)``."""
        missing = [name for name, _ in self.paths if name not in native]
        if missing:
            raise ValueError(f"missing component block(s): {', '.join(missing)}")
        series = []
        for name, _ in self.paths:
            img = native[name]
            series.append(img.flatten(start_dim=-3) @ getattr(self, f"inv_{name}"))
        return torch.stack(series, dim=-2)

    def tokens(self, native: Mapping[str, torch.Tensor], masks: Mapping[str, torch.Tensor]) -> torch.Tensor:
        out = []
        for name, _ in self.paths:
            h = F.silu(self.features[name](native[name]))
            m = masks[name].to(h.dtype)
            out.append((h * m).sum(dim=(-2, -1)) / m.sum())
        return torch.stack(out, dim=-2)

    def scale_weights(self, native, masks) -> torch.Tensor:
        refined = self.attend(self.tokens(native, masks))
        return self.weight_head(refined).squeeze(-1).softmax(dim=-1)

    def forward(
        self, native: Mapping[str, torch.Tensor], masks: Mapping[str, torch.Tensor]
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns ``(forecast (N, L), components (N, P, L), weights (N, P))``."""
        comps = self.invert_components(native)
        weights = self.scale_weights(native, masks)
        return adaptive_combine(comps, weights), comps, weights

    def path_names(self) -> Dict[str, int]:
        return dict(self.paths)
