"""Shared low-level layers: masked softmax/statistics and seeded initialization."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor | None, dim: int = -1) -> torch.Tensor:
    """Softmax that assigns exactly zero weight to masked positions.

    ``mask`` is boolean (True = attend), broadcastable to ``scores``. Rows with
    no attendable position come out as all zeros rather than NaN.
    """
    if mask is None:
        return torch.softmax(scores, dim=dim)
    neg = torch.finfo(scores.dtype).min
    weights = torch.softmax(scores.masked_fill(~mask, neg), dim=dim)
    weights = weights * mask.to(weights.dtype)
    denom = weights.sum(dim=dim, keepdim=True)
    return weights / denom.clamp_min(torch.finfo(weights.dtype).tiny)


class MaskedBatchNorm(nn.Module):
    """Per-channel batch normalization over the batch and time axes.

    Train mode normalizes with statistics of the unmasked positions and
    updates running estimates; eval mode uses the running estimates, making
    outputs independent of batch composition.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: (B, t, C); mask: (B, t) with True = real row
        if self.training:
            if mask is None:
                mean = x.mean(dim=(0, 1))
                var = x.var(dim=(0, 1), unbiased=False)
            else:
                m = mask.to(x.dtype).unsqueeze(-1)
                count = m.sum().clamp_min(1.0)
                mean = (x * m).sum(dim=(0, 1)) / count
                var = (((x - mean) ** 2) * m).sum(dim=(0, 1)) / count
            with torch.no_grad():
                self.running_mean.mul_(1 - self.momentum).add_(self.momentum * mean)
                self.running_var.mul_(1 - self.momentum).add_(self.momentum * var)
        else:
            mean = self.running_mean
            var = self.running_var
        out = (x - mean) / torch.sqrt(var + self.eps)
        return out * self.weight + self.bias


class TokenGroupNorm(nn.Module):
    """Group normalization applied independently at every sequence position."""

    def __init__(self, channels: int, groups: int = 1, eps: float = 1e-5):
        super().__init__()
        if channels % groups != 0:
            raise ValueError("groups must divide channels")
        self.groups = groups
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (..., C) -> normalize each group of C/groups channels per position
        shape = x.shape
        grouped = x.reshape(*shape[:-1], self.groups, shape[-1] // self.groups)
        mean = grouped.mean(dim=-1, keepdim=True)
        var = grouped.var(dim=-1, unbiased=False, keepdim=True)
        normed = ((grouped - mean) / torch.sqrt(var + self.eps)).reshape(shape)
        return normed * self.weight + self.bias


_NORM_TYPES = (MaskedBatchNorm, TokenGroupNorm, nn.LayerNorm)


def norm_param_names(model: nn.Module) -> set[str]:
    """Full names of parameters owned by normalization layers."""
    names: set[str] = set()
    for module_name, module in model.named_modules():
        if isinstance(module, _NORM_TYPES):
            for param_name, _ in module.named_parameters(recurse=False):
                names.add(f"{module_name}.{param_name}" if module_name else param_name)
    return names


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic initialization: Xavier-uniform matrices, zero biases,
    unit scales / zero shifts for normalization layers."""
    gen = torch.Generator().manual_seed(seed)
    norm_names = norm_param_names(model)
    with torch.no_grad():
        for name, param in sorted(model.named_parameters()):
            if name in norm_names:
                if name.endswith("bias"):
                    param.zero_()
                else:
                    param.fill_(1.0)
            elif param.ndim >= 2:
                bound = math.sqrt(6.0 / (param.shape[0] + param.shape[1]))
                sample = torch.rand(param.shape, generator=gen, dtype=torch.float32)
                param.copy_((sample * 2 * bound - bound).to(param.dtype))
            else:
                param.zero_()


def matrix_parameter(rows: int, cols: int) -> nn.Parameter:
    """Bias-free projection weight, Xavier-uniform so a freshly constructed
    module is usable on its own; seeded network init overwrites it."""
    weight = torch.empty(rows, cols)
    nn.init.xavier_uniform_(weight)
    return nn.Parameter(weight)


def ensure_batched(*tensors: torch.Tensor | None):
    """Add a leading batch axis to 2-D inputs (and 1-D masks); report if added."""
    added = tensors[0] is not None and tensors[0].ndim == 2
    if not added:
        return tensors, False
    out = tuple(t.unsqueeze(0) if t is not None else None for t in tensors)
    return out, True
