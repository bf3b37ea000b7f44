"""Attention-pooled detection head and the training loss.

The head scores every fused token with a small tanh MLP, softmaxes the scores
into pooling weights, collapses the sequence into one vector and classifies it
two ways (Normal vs Depression). The loss is the sum of a label-smoothed
binary cross entropy, a focal term and an L2 penalty over the non-norm weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import LossConfig
from .errors import NonFiniteValue
from .layers import ensure_batched, masked_softmax, norm_param_names

DEPRESSION = 1  # positive-class index; index 0 is Normal


@dataclass
class HeadOutput:
    probs: torch.Tensor   # (B, 2) class probabilities
    logits: torch.Tensor  # (B, 2)
    alpha: torch.Tensor   # (B, n_tokens) pooling weights
    pooled: torch.Tensor  # (B, d_z)


class DetectionHead(nn.Module):
    def __init__(self, d_z: int, hidden: int = 64):
        super().__init__()
        self.scorer = nn.Sequential(
            nn.Linear(d_z, hidden),
            nn.Tanh(),
            nn.Linear(hidden, 1),
        )
        self.classifier = nn.Linear(d_z, 2)

    def forward(self, z: torch.Tensor, token_mask: torch.Tensor | None = None) -> HeadOutput:
        (z, token_mask), squeeze = ensure_batched(z, token_mask)
        if not torch.isfinite(z).all():
            raise NonFiniteValue("detection head received non-finite tokens")
        scores = self.scorer(z).squeeze(-1)          # (B, n)
        alpha = masked_softmax(scores, token_mask, dim=-1)
        pooled = torch.einsum("bn,bnd->bd", alpha, z)
        logits = self.classifier(pooled)
        probs = torch.softmax(logits, dim=-1)
        if squeeze:
            return HeadOutput(probs=probs.squeeze(0), logits=logits.squeeze(0),
                              alpha=alpha.squeeze(0), pooled=pooled.squeeze(0))
        return HeadOutput(probs=probs, logits=logits, alpha=alpha, pooled=pooled)


def predict_label(probs: torch.Tensor) -> torch.Tensor:
    """Depression iff its probability strictly exceeds 0.5; ties resolve to Normal."""
    if probs.ndim == 1:
        probs = probs.unsqueeze(0)
    return (probs[..., DEPRESSION] > 0.5).long()


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

_P_EPS = 1e-7


def smooth_labels(y: torch.Tensor, eps_smooth: float) -> torch.Tensor:
    """y_s = y * (1 - eps) + 0.5 * eps, pulling both classes toward 1/2."""
    y = y.to(torch.get_default_dtype()) if not y.is_floating_point() else y
    return y * (1.0 - eps_smooth) + 0.5 * eps_smooth


def _bce_elements(p: torch.Tensor, y_s: torch.Tensor) -> torch.Tensor:
    p = p.clamp(_P_EPS, 1.0 - _P_EPS)
    return -(y_s * torch.log(p) + (1.0 - y_s) * torch.log1p(-p))


def smoothed_bce(p: torch.Tensor, y: torch.Tensor, eps_smooth: float = 0.1) -> torch.Tensor:
    """Mean binary cross entropy against smoothed targets; ``p`` is the
    predicted Depression probability."""
    return _bce_elements(p, smooth_labels(y, eps_smooth)).mean()


def focal_loss(
    p: torch.Tensor,
    y: torch.Tensor,
    phi: float = 1.0,
    gamma: float = 2.0,
    eps_smooth: float = 0.0,
    symmetric: bool = False,
) -> torch.Tensor:
    """phi * (1 - p)^gamma * BCE. The modulating factor uses the raw positive
    probability for every sample; ``symmetric=True`` switches it to the
    probability assigned to the true class, which down-weights easy negatives
    as well as easy positives."""
    bce = _bce_elements(p, smooth_labels(y, eps_smooth))
    if symmetric:
        y_f = y.to(p.dtype)
        p_t = y_f * p + (1.0 - y_f) * (1.0 - p)
        factor = (1.0 - p_t).clamp_min(0.0) ** gamma
    else:
        factor = (1.0 - p).clamp_min(0.0) ** gamma
    return (phi * factor * bce).mean()


def l2_penalty(model: nn.Module, lam: float) -> torch.Tensor:
    """lam * sum of squared parameters, skipping normalization scales/shifts."""
    skip = norm_param_names(model)
    total = None
    for name, param in model.named_parameters():
        if name in skip or not param.requires_grad:
            continue
        sq = (param ** 2).sum()
        total = sq if total is None else total + sq
    if total is None:
        return torch.tensor(0.0)
    return lam * total


def total_loss(
    p: torch.Tensor,
    y: torch.Tensor,
    model: nn.Module | None = None,
    cfg: LossConfig | None = None,
) -> torch.Tensor:
    """Composite objective: smoothed BCE + focal + L2 over model weights."""
    cfg = cfg or LossConfig()
    loss = smoothed_bce(p, y, cfg.eps_smooth)
    loss = loss + focal_loss(p, y, cfg.phi, cfg.gamma, cfg.eps_smooth, cfg.symmetric_focal)
    if model is not None and cfg.lam > 0:
        loss = loss + l2_penalty(model, cfg.lam)
    return loss
