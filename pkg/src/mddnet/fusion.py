"""Mutual-transformer fusion of the two modality streams.

Both streams are first projected to a common width ``d_m = d_a + d_v``. Two
mutual blocks compute the audio-queried and video-queried correlation streams;
a joint transformer layer runs self-attention over the sequence-concatenated
pair. Each stream is projected to ``d_z = 2 * d_m``, average-pooled along time
(stride 1, shape preserving) and concatenated along the sequence axis into the
fused representation with ``4n`` tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch, UnknownMode
from .layers import ensure_batched, masked_softmax, matrix_parameter

_ACTIVATIONS = {"gelu": F.gelu, "relu": F.relu, "tanh": torch.tanh}


@dataclass
class FusedRepresentation:
    """The three fusion streams and their pooled concatenation ``z`` (4n tokens)."""

    mc_av: torch.Tensor   # (B, n, d_z)
    mc_va: torch.Tensor   # (B, n, d_z)
    mc_fav: torch.Tensor  # (B, 2n, d_z)
    z: torch.Tensor       # (B, 4n, d_z)
    token_mask: torch.Tensor | None = None  # (B, 4n)


class CrossAttention(nn.Module):
    """Scaled dot-product attention with queries from one stream and keys/values
    from the other."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.w_q = matrix_parameter(dim, dim)
        self.w_k = matrix_parameter(dim, dim)
        self.w_v = matrix_parameter(dim, dim)

    def forward(
        self,
        xq: torch.Tensor,
        xkv: torch.Tensor,
        kv_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        (xq, kv_mask), squeeze = ensure_batched(xq, kv_mask)
        if xkv.ndim == 2:
            xkv = xkv.unsqueeze(0)
        q = xq @ self.w_q
        k = xkv @ self.w_k
        v = xkv @ self.w_v
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.dim)
        key_mask = kv_mask.unsqueeze(1) if kv_mask is not None else None
        weights = masked_softmax(scores, key_mask, dim=-1)
        out = weights @ v
        return out.squeeze(0) if squeeze else out


class MutualBlock(nn.Module):
    """One mutual-transformer direction: cross attention with a residual and
    layer norm, a single activated affine map with another residual and norm,
    then a projection to the fused width."""

    def __init__(self, dim: int, out_dim: int, activation: str = "gelu"):
        super().__init__()
        self.cross = CrossAttention(dim)
        self.ln_attn = nn.LayerNorm(dim)
        self.ln_out = nn.LayerNorm(dim)
        self.beta = matrix_parameter(dim, dim)
        self.b = nn.Parameter(torch.zeros(dim))
        self.w_z = matrix_parameter(dim, out_dim)
        if activation not in _ACTIVATIONS:
            raise UnknownMode(f"unknown activation {activation!r}")
        self.act = _ACTIVATIONS[activation]

    def forward(
        self,
        xq: torch.Tensor,
        xkv: torch.Tensor,
        q_mask: torch.Tensor | None = None,
        kv_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        (xq, q_mask), squeeze = ensure_batched(xq, q_mask)
        if xkv.ndim == 2:
            xkv = xkv.unsqueeze(0)
        if xq.shape[-1] != xkv.shape[-1]:
            raise ShapeMismatch("mutual block expects both streams at the common width")
        inner = self.ln_attn(xq + self.cross(xq, xkv, kv_mask))
        out = self.ln_out(xq + self.act(inner @ self.beta) + self.b)
        if q_mask is not None:
            out = out * q_mask.unsqueeze(-1).to(out.dtype)
        out = out @ self.w_z
        return out.squeeze(0) if squeeze else out


class JointFusion(nn.Module):
    """Self-attention transformer layer over the sequence-concatenated streams,
    projected to the fused width (2n tokens out for n tokens per modality)."""

    def __init__(self, dim: int, out_dim: int, heads: int = 1):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("heads must divide dim")
        self.dim = dim
        self.heads = heads
        self.w_q = matrix_parameter(dim, dim)
        self.w_k = matrix_parameter(dim, dim)
        self.w_v = matrix_parameter(dim, dim)
        self.w_o = matrix_parameter(dim, dim)
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim),
            nn.GELU(),
            nn.Linear(4 * dim, dim),
        )
        self.w_z = matrix_parameter(dim, out_dim)

    def _self_attention(self, x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        b, t, _ = x.shape
        d_h = self.dim // self.heads
        q = (x @ self.w_q).view(b, t, self.heads, d_h).transpose(1, 2)
        k = (x @ self.w_k).view(b, t, self.heads, d_h).transpose(1, 2)
        v = (x @ self.w_v).view(b, t, self.heads, d_h).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d_h)
        key_mask = mask[:, None, None, :] if mask is not None else None
        weights = masked_softmax(scores, key_mask, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, t, self.dim)
        return out @ self.w_o

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        (x, mask), squeeze = ensure_batched(x, mask)
        hidden = self.ln1(x + self._self_attention(x, mask))
        out = self.ln2(hidden + self.ffn(hidden))
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        out = out @ self.w_z
        return out.squeeze(0) if squeeze else out


def temporal_avg_pool(
    x: torch.Tensor,
    window: int,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Shape-preserving average pooling along time (stride 1, symmetric padding);
    each position averages the in-bounds, unmasked members of its window."""
    if window < 1:
        raise ShapeMismatch("pooling window must be >= 1")
    if window == 1:
        return x
    (x, mask), squeeze = ensure_batched(x, mask)
    b, t, _ = x.shape
    m = mask.to(x.dtype) if mask is not None else x.new_ones(b, t)
    left = (window - 1) // 2
    right = window - 1 - left
    x_pad = F.pad(x * m.unsqueeze(-1), (0, 0, left, right))
    m_pad = F.pad(m, (left, right))
    sums = x_pad.unfold(1, window, 1).sum(dim=-1)
    counts = m_pad.unfold(1, window, 1).sum(dim=-1)
    out = sums / counts.clamp_min(1.0).unsqueeze(-1)
    return out.squeeze(0) if squeeze else out


class MutualTransformerFusion(nn.Module):
    """Full fusion: project both modalities to the common width, run the two
    mutual directions plus the joint layer, pool and concatenate into ``z``."""

    def __init__(
        self,
        d_a: int,
        d_v: int,
        heads: int = 1,
        pool_window: int = 3,
        activation: str = "gelu",
    ):
        super().__init__()
        d_m = d_a + d_v
        d_z = 2 * d_m
        self.d_m = d_m
        self.d_z = d_z
        self.pool_window = pool_window
        self.proj_a = matrix_parameter(d_a, d_m)
        self.proj_v = matrix_parameter(d_v, d_m)
        self.mutual_av = MutualBlock(d_m, d_z, activation)
        self.mutual_va = MutualBlock(d_m, d_z, activation)
        self.joint = JointFusion(d_m, d_z, heads)

    def forward(
        self,
        xa: torch.Tensor,
        xv: torch.Tensor,
        mask_a: torch.Tensor | None = None,
        mask_v: torch.Tensor | None = None,
    ) -> FusedRepresentation:
        (xa, mask_a), squeeze = ensure_batched(xa, mask_a)
        (xv, mask_v), _ = ensure_batched(xv, mask_v)
        a_m = xa @ self.proj_a
        v_m = xv @ self.proj_v
        mc_av = self.mutual_av(a_m, v_m, mask_a, mask_v)
        mc_va = self.mutual_va(v_m, a_m, mask_v, mask_a)
        joint_in = torch.cat([a_m, v_m], dim=1)
        joint_mask = _cat_masks(mask_a, mask_v, xa, xv)
        mc_fav = self.joint(joint_in, joint_mask)

        # The joint stream is the two modalities laid end to end; its halves are
        # pooled separately so the sliding window never averages the last audio
        # token with the first video token (those are not adjacent in time).
        w = self.pool_window
        n_a = xa.shape[1]
        z = torch.cat(
            [
                _mask_rows(temporal_avg_pool(mc_av, w, mask_a), mask_a),
                _mask_rows(temporal_avg_pool(mc_va, w, mask_v), mask_v),
                _mask_rows(temporal_avg_pool(mc_fav[:, :n_a], w, mask_a), mask_a),
                _mask_rows(temporal_avg_pool(mc_fav[:, n_a:], w, mask_v), mask_v),
            ],
            dim=1,
        )
        token_mask = None
        if mask_a is not None or mask_v is not None:
            token_mask = torch.cat(
                [_or_ones(mask_a, xa), _or_ones(mask_v, xv), _or_ones(joint_mask, z)], dim=1)
        fused = FusedRepresentation(mc_av=mc_av, mc_va=mc_va, mc_fav=mc_fav, z=z,
                                    token_mask=token_mask)
        if squeeze:
            fused = FusedRepresentation(
                mc_av=fused.mc_av.squeeze(0),
                mc_va=fused.mc_va.squeeze(0),
                mc_fav=fused.mc_fav.squeeze(0),
                z=fused.z.squeeze(0),
                token_mask=fused.token_mask.squeeze(0) if fused.token_mask is not None else None,
            )
        return fused


def _mask_rows(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return x
    return x * mask.unsqueeze(-1).to(x.dtype)


def _cat_masks(mask_a, mask_v, xa, xv):
    if mask_a is None and mask_v is None:
        return None
    return torch.cat([_or_ones(mask_a, xa), _or_ones(mask_v, xv)], dim=1)


def _or_ones(mask, ref):
    if mask is not None:
        return mask
    return torch.ones(ref.shape[0], ref.shape[1], dtype=torch.bool, device=ref.device)


BASELINE_MODES = ("add", "multiply", "concat")


class BaselineFusion(nn.Module):
    """Single-layer fusion baselines: elementwise add, elementwise multiply, or
    feature-axis concatenation + projection. All emit n x d_z so the same
    detection head applies."""

    def __init__(self, d_a: int, d_v: int, mode: str):
        super().__init__()
        if mode not in BASELINE_MODES:
            raise UnknownMode(f"unknown fusion mode {mode!r}")
        self.mode = mode
        d_z = 2 * (d_a + d_v)
        self.d_z = d_z
        self.proj_a = matrix_parameter(d_a, d_z)
        self.proj_v = matrix_parameter(d_v, d_z)
        if mode == "concat":
            self.w_c = matrix_parameter(2 * d_z, d_z)

    def forward(
        self,
        xa: torch.Tensor,
        xv: torch.Tensor,
        mask_a: torch.Tensor | None = None,
        mask_v: torch.Tensor | None = None,
    ) -> FusedRepresentation:
        (xa, mask_a), squeeze = ensure_batched(xa, mask_a)
        (xv, mask_v), _ = ensure_batched(xv, mask_v)
        if xa.shape[1] != xv.shape[1]:
            raise ShapeMismatch("baseline fusion expects equal-length streams")
        a = xa @ self.proj_a
        v = xv @ self.proj_v
        if self.mode == "add":
            z = a + v
        elif self.mode == "multiply":
            z = a * v
        else:
            z = torch.cat([a, v], dim=-1) @ self.w_c
        token_mask = None
        if mask_a is not None or mask_v is not None:
            token_mask = _or_ones(mask_a, xa) & _or_ones(mask_v, xv)
            z = z * token_mask.unsqueeze(-1).to(z.dtype)
        fused = FusedRepresentation(mc_av=z, mc_va=z, mc_fav=z, z=z, token_mask=token_mask)
        if squeeze:
            fused = FusedRepresentation(
                mc_av=z.squeeze(0), mc_va=z.squeeze(0), mc_fav=z.squeeze(0),
                z=z.squeeze(0),
                token_mask=token_mask.squeeze(0) if token_mask is not None else None)
        return fused
