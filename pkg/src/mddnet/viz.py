"""Figure emitters: t-SNE scatter of pooled embeddings and token-attention
heatmaps, each with a CSV sidecar so the numbers are inspectable."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
import numpy as np
import torch

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .config import TsneConfig
from .data import LABELS
from .errors import IoError
from .head import DEPRESSION
from .network import DepressionNet
from .train import Bundle, _forward
from .tsne import TsneResult, tsne

_HEAT_CMAP = "Greys"  # darker = larger weight


def pooled_embedding(model: DepressionNet, xa, xv, mask_a=None, mask_v=None) -> np.ndarray:
    """The detection layer's attention-pooled vector for one sample — taken
    from the same forward pass that produces the probabilities, not a copy of
    the pooling code."""
    model.eval()
    with torch.no_grad():
        out = model(xa=xa, xv=xv, mask_a=mask_a, mask_v=mask_v)
    pooled = out.pooled
    if pooled.ndim == 2:
        pooled = pooled.squeeze(0)
    return pooled.numpy().copy()


def batch_outputs(model: DepressionNet, bundle: Bundle, batch_size: int = 32):
    """(pooled (N,d_z), alpha (N,tokens), predictions (N,)) for a bundle."""
    model.eval()
    pooled, alpha, preds = [], [], []
    with torch.no_grad():
        for start in range(0, bundle.n, batch_size):
            idx = np.arange(start, min(start + batch_size, bundle.n))
            out = _forward(model, bundle, idx)
            pooled.append(out.pooled.numpy())
            alpha.append(out.alpha.numpy())
            preds.append((out.probs[:, DEPRESSION] > 0.5).long().numpy())
    return np.concatenate(pooled), np.concatenate(alpha), np.concatenate(preds)


def emit_tsne(
    model: DepressionNet,
    bundle: Bundle,
    out_path: str | Path,
    cfg: TsneConfig | None = None,
) -> TsneResult:
    """t-SNE scatter of the pooled embeddings, colored by true label; writes
    ``<out>.png`` and a ``<out>.csv`` of coordinates."""
    pooled, _, preds = batch_outputs(model, bundle)
    result = tsne(pooled, cfg)
    out_path = Path(out_path)
    _write_tsne_csv(out_path.with_suffix(".csv"), bundle, result, preds)

    fig, ax = plt.subplots(figsize=(6, 5))
    labels = bundle.y.numpy()
    for value, color, marker in ((0, "tab:blue", "o"), (1, "tab:red", "^")):
        sel = labels == value
        ax.scatter(result.coords[sel, 0], result.coords[sel, 1],
                   c=color, marker=marker, s=18, label=LABELS[value], alpha=0.8)
    ax.legend()
    ax.set_title(f"fused-feature t-SNE (KL={result.kl:.3f})")
    fig.tight_layout()
    _save_figure(fig, out_path.with_suffix(".png"))
    return result


def _write_tsne_csv(path: Path, bundle: Bundle, result: TsneResult, preds: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "x", "y", "label", "predicted"])
        for i, sample_id in enumerate(bundle.ids):
            writer.writerow([
                sample_id, f"{result.coords[i, 0]:.6f}", f"{result.coords[i, 1]:.6f}",
                LABELS[int(bundle.y[i])], LABELS[int(preds[i])],
            ])


def emit_weight_heatmap(
    model: DepressionNet,
    bundle: Bundle,
    out_path: str | Path,
) -> dict[str, Path]:
    """Per-sample token-attention rows rendered as heatmaps grouped by
    predicted class. Writes ``<out>.png``, a pure-numeric ``<out>.csv`` whose
    rows are the alpha vectors, and ``<out>_rows.csv`` mapping row indices to
    sample ids and predicted classes."""
    _, alpha, preds = batch_outputs(model, bundle)
    order = np.argsort(preds, kind="stable")  # Normal rows first, then Depression
    alpha_sorted = alpha[order]
    out_path = Path(out_path)
    csv_path = out_path.with_suffix(".csv")
    rows_path = out_path.with_name(out_path.stem + "_rows.csv")
    png_path = out_path.with_suffix(".png")

    np.savetxt(csv_path, alpha_sorted, delimiter=",", fmt="%.8g")
    with open(rows_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "id", "predicted"])
        for row, i in enumerate(order):
            writer.writerow([row, bundle.ids[int(i)], LABELS[int(preds[int(i)])]])

    groups = [(name, alpha_sorted[preds[order] == value])
              for value, name in enumerate(LABELS)]
    groups = [(name, block) for name, block in groups if block.shape[0] > 0]
    fig, axes = plt.subplots(len(groups), 1, figsize=(8, 2 + 1.5 * len(groups)),
                             squeeze=False)
    vmax = float(alpha.max()) if alpha.size else 1.0
    for ax, (name, block) in zip(axes[:, 0], groups):
        ax.imshow(block, aspect="auto", cmap=_HEAT_CMAP, vmin=0.0, vmax=vmax,
                  interpolation="nearest")
        ax.set_ylabel(f"{name}\n({block.shape[0]})")
        ax.set_xlabel("fused token")
    fig.suptitle("token attention weights (darker = higher)")
    fig.tight_layout()
    _save_figure(fig, png_path)
    return {"png": png_path, "csv": csv_path, "rows": rows_path}


def _save_figure(fig, path: Path) -> None:
    try:
        fig.savefig(path, dpi=120)
    except OSError as exc:
        raise IoError(f"cannot write figure {path}: {exc}") from exc
    finally:
        plt.close(fig)
