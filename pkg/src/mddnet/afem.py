"""Acoustic feature extractor: global content attention plus relative-positional
attention over neighboring time steps, combined through a batch-normalized
pointwise projection.

Input sequences are t x 25 acoustic descriptors; output is t x d_a. The three
pointwise projections (queries, keys, values) are bias-free and shared by both
attention branches; the positional branch replaces keys with learned relative
position embeddings over a window of ``window`` offsets centered on each step.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import MaskedBatchNorm, ensure_batched, masked_softmax, matrix_parameter


class AcousticExtractor(nn.Module):
    def __init__(self, d_in: int = 25, d_out: int = 71, window: int = 7):
        super().__init__()
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        self.d_in = d_in
        self.d_out = d_out
        self.window = window
        self.w_q = matrix_parameter(d_in, d_in)
        self.w_k = matrix_parameter(d_in, d_in)
        self.w_v = matrix_parameter(d_in, d_out)
        # Relative position embeddings acting as keys: row i is the embedding
        # for offset i - (window - 1) // 2.
        self.rel_embed = matrix_parameter(window, d_in)
        self.w_o = matrix_parameter(d_out, d_out)
        self.bn = MaskedBatchNorm(d_out)

    def content_attention(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Global attention: keys are softmax-normalized along time per channel,
        aggregate the values into d_in context vectors, and queries redistribute
        them to each step. Padded rows take no part as keys or values."""
        (x, mask), squeeze = ensure_batched(x, mask)
        q = x @ self.w_q
        k = x @ self.w_k
        v = x @ self.w_v
        key_mask = mask.unsqueeze(-1) if mask is not None else None
        weights = masked_softmax(k, key_mask, dim=1)  # (B, t, d_in), time axis
        context = torch.einsum("btc,btd->bcd", weights, v)  # (B, d_in, d_out)
        out = q @ context
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out.squeeze(0) if squeeze else out

    def positional_attention(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Each step queries its ``window`` neighbors: score against the relative
        position embeddings, then mix the neighboring value rows. Neighbors
        outside the sequence or at padded rows contribute zero."""
        (x, mask), squeeze = ensure_batched(x, mask)
        q = x @ self.w_q
        v = x @ self.w_v
        if mask is not None:
            v = v * mask.unsqueeze(-1).to(v.dtype)
        half = (self.window - 1) // 2
        scores = q @ self.rel_embed.T  # (B, t, window)
        padded = F.pad(v, (0, 0, half, half))  # zero rows beyond the ends
        neighborhoods = padded.unfold(1, self.window, 1)  # (B, t, d_out, window)
        out = torch.einsum("btn,btdn->btd", scores, neighborhoods)
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out.squeeze(0) if squeeze else out

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        (x, mask), squeeze = ensure_batched(x, mask)
        content = self.content_attention(x, mask)
        positional = self.positional_attention(x, mask)
        out = content + self.bn(positional @ self.w_o, mask)
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out.squeeze(0) if squeeze else out
