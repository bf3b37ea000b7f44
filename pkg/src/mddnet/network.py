"""End-to-end depression detection network.

Glues the acoustic extractor, visual extractor, fusion stage and detection
head into one module. Three operating modes:

* ``mdd``       — both extractors + fusion (``mt`` or a single-layer baseline).
* ``afem_only`` — acoustic extractor, projected straight to the head.
* ``vfem_only`` — visual extractor, projected straight to the head.

All modes emit tokens of width ``d_z`` so the identical head applies and
ablations vary exactly one factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .afem import AcousticExtractor
from .config import ModelConfig
from .errors import NonFiniteValue, UnknownMode
from .fusion import (
    BASELINE_MODES,
    BaselineFusion,
    FusedRepresentation,
    MutualTransformerFusion,
)
from .head import DetectionHead, HeadOutput
from .layers import ensure_batched, init_parameters, matrix_parameter
from .vfem import VisualExtractor

MODES = ("mdd", "afem_only", "vfem_only")
FUSIONS = ("mt",) + BASELINE_MODES


@dataclass
class NetworkOutput:
    head: HeadOutput
    fused: FusedRepresentation | None = None

    @property
    def probs(self) -> torch.Tensor:
        return self.head.probs

    @property
    def alpha(self) -> torch.Tensor:
        return self.head.alpha

    @property
    def pooled(self) -> torch.Tensor:
        return self.head.pooled


class DepressionNet(nn.Module):
    def __init__(
        self,
        cfg: ModelConfig | None = None,
        mode: str = "mdd",
        fusion: str = "mt",
        seed: int = 0,
    ):
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        if mode not in MODES:
            raise UnknownMode(f"unknown mode {mode!r}")
        if fusion not in FUSIONS:
            raise UnknownMode(f"unknown fusion {fusion!r}")
        self.cfg = cfg
        self.mode = mode
        self.fusion_mode = fusion

        if mode in ("mdd", "afem_only"):
            self.afem = AcousticExtractor(cfg.d_a_in, cfg.d_a, cfg.afem_window)
        if mode in ("mdd", "vfem_only"):
            self.vfem = VisualExtractor(
                cfg.d_v_in, cfg.d_v,
                depths=cfg.vfem_depths, strides=cfg.vfem_strides,
                heads=cfg.vfem_heads, groups=cfg.vfem_groups,
                mlp_ratio=cfg.vfem_mlp_ratio, faithful=cfg.faithful,
            )
        if mode == "mdd":
            if fusion == "mt":
                self.fuse = MutualTransformerFusion(
                    cfg.d_a, cfg.d_v, heads=cfg.fusion_heads,
                    pool_window=cfg.pool_window, activation=cfg.fusion_activation)
            else:
                self.fuse = BaselineFusion(cfg.d_a, cfg.d_v, fusion)
        else:
            width = cfg.d_a if mode == "afem_only" else cfg.d_v
            self.proj = matrix_parameter(width, cfg.d_z)
        self.head = DetectionHead(cfg.d_z, cfg.head_hidden)
        init_parameters(self, seed)

    def forward(
        self,
        xa: torch.Tensor | None = None,
        xv: torch.Tensor | None = None,
        mask_a: torch.Tensor | None = None,
        mask_v: torch.Tensor | None = None,
    ) -> NetworkOutput:
        squeeze = False
        if xa is not None:
            _check_finite(xa, "acoustic")
            (xa, mask_a), squeeze = ensure_batched(xa, mask_a)
        if xv is not None:
            _check_finite(xv, "visual")
            (xv, mask_v), squeeze = ensure_batched(xv, mask_v)

        if self.mode == "afem_only":
            if xa is None:
                raise UnknownMode("afem_only mode requires acoustic input")
            feats, mask = self.afem(xa, mask_a), mask_a
            out = self._unimodal_head(feats, mask)
        elif self.mode == "vfem_only":
            if xv is None:
                raise UnknownMode("vfem_only mode requires visual input")
            feats, mask = self.vfem.forward_with_mask(xv, mask_v)
            out = self._unimodal_head(feats, mask)
        else:
            if xa is None or xv is None:
                raise UnknownMode("mdd mode requires both modalities")
            fa = self.afem(xa, mask_a)
            fv, mv = self.vfem.forward_with_mask(xv, mask_v)
            fused = self.fuse(fa, fv, mask_a, mv)
            out = NetworkOutput(head=self.head(fused.z, fused.token_mask), fused=fused)

        if squeeze:
            out = NetworkOutput(
                head=HeadOutput(
                    probs=out.head.probs.squeeze(0),
                    logits=out.head.logits.squeeze(0),
                    alpha=out.head.alpha.squeeze(0),
                    pooled=out.head.pooled.squeeze(0),
                ),
                fused=_squeeze_fused(out.fused),
            )
        return out

    def _unimodal_head(self, feats: torch.Tensor, mask: torch.Tensor | None) -> NetworkOutput:
        tokens = feats @ self.proj
        if mask is not None:
            tokens = tokens * mask.unsqueeze(-1).to(tokens.dtype)
        return NetworkOutput(head=self.head(tokens, mask), fused=None)


def _check_finite(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise NonFiniteValue(f"{name} input contains non-finite values")


def _squeeze_fused(fused: FusedRepresentation | None) -> FusedRepresentation | None:
    if fused is None:
        return None
    return FusedRepresentation(
        mc_av=fused.mc_av.squeeze(0),
        mc_va=fused.mc_va.squeeze(0),
        mc_fav=fused.mc_fav.squeeze(0),
        z=fused.z.squeeze(0),
        token_mask=fused.token_mask.squeeze(0) if fused.token_mask is not None else None,
    )
