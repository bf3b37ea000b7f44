"""Finite-difference verification of the training gradient.

The analytic side is the gradient of the composite loss from reverse-mode
differentiation. The numeric side is recomputed here from scratch: for a
seeded subset of coordinates in every parameter array, perturb the entry by
+/- epsilon, evaluate the loss twice and form the central difference. The two
routes share nothing but the loss function, so agreement is evidence the
computation graph matches the intended math.

Run at float64: float32 round-off sits near the 1e-4 tolerance itself.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .config import LossConfig
from .head import DEPRESSION, total_loss
from .network import DepressionNet


@dataclass
class GradCheckResult:
    per_array: dict[str, float]  # max relative error over sampled coordinates
    worst_name: str
    worst: float

    def to_dict(self) -> dict:
        return {"per_array": self.per_array, "worst_name": self.worst_name,
                "worst": self.worst}


def _coord_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def relative_error(g_a: float, g_n: float) -> float:
    return abs(g_a - g_n) / max(abs(g_a), abs(g_n), 1e-8)


def grad_check(
    model: DepressionNet,
    xa: torch.Tensor | None,
    xv: torch.Tensor | None,
    y: torch.Tensor,
    mask_a: torch.Tensor | None = None,
    mask_v: torch.Tensor | None = None,
    loss_cfg: LossConfig | None = None,
    epsilon: float = 1e-5,
    max_coords: int = 20,
    seed: int = 0,
    corrupt_array: str | None = None,
    corrupt_factor: float = 2.0,
    zero_tol: float = 1e-7,
) -> GradCheckResult:
    """Compare analytic and central-difference gradients for every parameter
    array. ``corrupt_array`` deliberately scales that array's analytic gradient
    so tests can confirm the check actually detects wrong gradients.

    Coordinates where both routes fall below ``zero_tol`` count as exact
    agreement: a central difference of an O(1) loss bottoms out around 1e-11
    from cancellation, so comparing two numerical zeros by ratio is noise.
    """
    loss_cfg = loss_cfg or LossConfig()
    model = model.double()
    model.train()
    xa = xa.double() if xa is not None else None
    xv = xv.double() if xv is not None else None

    def loss_value() -> torch.Tensor:
        out = model(xa=xa, xv=xv, mask_a=mask_a, mask_v=mask_v)
        probs = out.probs if out.probs.ndim == 2 else out.probs.unsqueeze(0)
        return total_loss(probs[:, DEPRESSION], y, model, loss_cfg)

    model.zero_grad(set_to_none=True)
    loss_value().backward()
    analytic = {
        name: (param.grad.detach().clone() if param.grad is not None
               else torch.zeros_like(param))
        for name, param in model.named_parameters()
    }
    if corrupt_array is not None:
        if corrupt_array not in analytic:
            raise KeyError(f"no parameter array named {corrupt_array!r}")
        analytic[corrupt_array] = analytic[corrupt_array] * corrupt_factor

    per_array: dict[str, float] = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.view(-1)
            n = flat.numel()
            rng = _coord_rng(seed, name)
            coords = (np.arange(n) if n <= max_coords
                      else rng.choice(n, size=max_coords, replace=False))
            worst = 0.0
            grad_flat = analytic[name].view(-1)
            for c in coords:
                c = int(c)
                original = flat[c].item()
                flat[c] = original + epsilon
                plus = loss_value().item()
                flat[c] = original - epsilon
                minus = loss_value().item()
                flat[c] = original
                numeric = (plus - minus) / (2.0 * epsilon)
                g_a = grad_flat[c].item()
                if max(abs(g_a), abs(numeric)) < zero_tol:
                    continue
                worst = max(worst, relative_error(g_a, numeric))
            per_array[name] = worst

    worst_name = max(per_array, key=per_array.get)
    return GradCheckResult(per_array=per_array, worst_name=worst_name,
                           worst=per_array[worst_name])


def grad_check_random(
    cfg,
    mode: str = "mdd",
    fusion: str = "mt",
    batch: int = 2,
    epsilon: float = 1e-5,
    max_coords: int = 20,
    seed: int = 0,
) -> GradCheckResult:
    """Convenience wrapper: random inputs (with a ragged padding mask) shaped
    by ``cfg`` (a ModelConfig)."""
    gen = torch.Generator().manual_seed(seed)
    t = cfg.t
    xa = torch.randn(batch, t, cfg.d_a_in, generator=gen, dtype=torch.float64)
    xv = torch.randn(batch, t, cfg.d_v_in, generator=gen, dtype=torch.float64)
    mask = torch.ones(batch, t, dtype=torch.bool)
    if batch > 1 and t > 2:
        mask[-1, t - t // 4:] = False  # exercise the masked paths
    y = (torch.rand(batch, generator=gen) > 0.5).long()
    model = DepressionNet(cfg, mode=mode, fusion=fusion, seed=seed)
    if mode == "afem_only":
        return grad_check(model, xa, None, y, mask_a=mask,
                          epsilon=epsilon, max_coords=max_coords, seed=seed)
    if mode == "vfem_only":
        return grad_check(model, None, xv, y, mask_v=mask,
                          epsilon=epsilon, max_coords=max_coords, seed=seed)
    return grad_check(model, xa, xv, y, mask_a=mask, mask_v=mask,
                      epsilon=epsilon, max_coords=max_coords, seed=seed)
