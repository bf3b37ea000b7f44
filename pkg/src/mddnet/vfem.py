"""Visual feature extractor: pointwise patch embedding followed by staged
multi-head self-attention blocks with residual projections and an MLP, plus
average-pool downsampling between stages.

Input sequences are t x 136 facial-landmark vectors; output is n x d_v where
n is t reduced by the product of stage strides (all 1 by default).
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .layers import TokenGroupNorm, ensure_batched, masked_softmax, matrix_parameter


class PatchEmbed(nn.Module):
    """Pointwise projection -> per-position group norm -> SiLU -> pointwise projection."""

    def __init__(self, d_in: int = 136, d_out: int = 139, groups: int = 1):
        super().__init__()
        self.w1 = matrix_parameter(d_in, d_out)
        self.norm = TokenGroupNorm(d_out, groups)
        self.w2 = matrix_parameter(d_out, d_out)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        (x, mask), squeeze = ensure_batched(x, mask)
        out = torch.nn.functional.silu(self.norm(x @ self.w1)) @ self.w2
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out.squeeze(0) if squeeze else out


class HmhsaBlock(nn.Module):
    """Self-attention block: scaled dot-product attention per head, a projected
    residual, then an MLP with its own residual.

    ``faithful=True`` drops the two stability layer norms, leaving the bare
    attention/residual/MLP composition.
    """

    def __init__(self, dim: int, heads: int = 1, mlp_ratio: int = 4, faithful: bool = False):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("heads must divide dim")
        self.dim = dim
        self.heads = heads
        self.faithful = faithful
        self.w_q = matrix_parameter(dim, dim)
        self.w_k = matrix_parameter(dim, dim)
        self.w_v = matrix_parameter(dim, dim)
        self.w_p = matrix_parameter(dim, dim)
        self.ln_attn = nn.LayerNorm(dim)
        self.ln_mlp = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def attention(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        b, t, _ = x.shape
        d_h = self.dim // self.heads
        q = (x @ self.w_q).view(b, t, self.heads, d_h).transpose(1, 2)
        k = (x @ self.w_k).view(b, t, self.heads, d_h).transpose(1, 2)
        v = (x @ self.w_v).view(b, t, self.heads, d_h).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d_h)  # (B, h, t, t)
        key_mask = mask[:, None, None, :] if mask is not None else None
        weights = masked_softmax(scores, key_mask, dim=-1)
        out = weights @ v  # (B, h, t, d_h)
        return out.transpose(1, 2).reshape(b, t, self.dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        (x, mask), squeeze = ensure_batched(x, mask)
        src = x if self.faithful else self.ln_attn(x)
        attended = self.attention(src, mask)
        mid = attended @ self.w_p + x
        hidden = mid if self.faithful else self.ln_mlp(mid)
        out = self.mlp(hidden) + mid
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out.squeeze(0) if squeeze else out


def downsample(
    x: torch.Tensor,
    stride: int,
    mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Average-pool along time with window = stride; the final partial window is
    averaged over its real members. Stride 1 is the identity."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return x, mask
    (x, mask), squeeze = ensure_batched(x, mask)
    b, t, d = x.shape
    n_out = math.ceil(t / stride)
    pad = n_out * stride - t
    m = mask.to(x.dtype) if mask is not None else x.new_ones(b, t)
    x_pad = torch.nn.functional.pad(x * m.unsqueeze(-1), (0, 0, 0, pad))
    m_pad = torch.nn.functional.pad(m, (0, pad))
    sums = x_pad.view(b, n_out, stride, d).sum(dim=2)
    counts = m_pad.view(b, n_out, stride).sum(dim=2)
    out = sums / counts.clamp_min(1.0).unsqueeze(-1)
    new_mask = (counts > 0) if mask is not None else None
    if squeeze:
        return out.squeeze(0), new_mask.squeeze(0) if new_mask is not None else None
    return out, new_mask


class VisualExtractor(nn.Module):
    def __init__(
        self,
        d_in: int = 136,
        d_out: int = 139,
        depths: tuple[int, ...] = (1, 2, 4, 2),
        strides: tuple[int, ...] = (1, 1, 1, 1),
        heads: int = 1,
        groups: int = 1,
        mlp_ratio: int = 4,
        faithful: bool = False,
    ):
        super().__init__()
        if len(depths) != len(strides):
            raise ValueError("depths and strides must have equal length")
        self.embed = PatchEmbed(d_in, d_out, groups)
        self.strides = tuple(strides)
        self.stages = nn.ModuleList(
            nn.ModuleList(HmhsaBlock(d_out, heads, mlp_ratio, faithful) for _ in range(depth))
            for depth in depths
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        out, out_mask = self.forward_with_mask(x, mask)
        return out

    def forward_with_mask(
        self,
        x: torch.Tensor,
        mask: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        (x, mask), squeeze = ensure_batched(x, mask)
        out = self.embed(x, mask)
        for blocks, stride in zip(self.stages, self.strides):
            for block in blocks:
                out = block(out, mask)
            out, mask = downsample(out, stride, mask)
        if squeeze:
            return out.squeeze(0), mask.squeeze(0) if mask is not None else None
        return out, mask
