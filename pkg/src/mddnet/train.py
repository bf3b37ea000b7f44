"""Training loop, early stopping, evaluation metrics, cross-validation and the
fusion ablation runner.

Determinism contract: parameter init comes from the config seed, and the batch
order of epoch ``e`` is derived from ``(seed, e)`` alone — not from any earlier
epoch — so two runs sharing a seed consume identical batch sequences even if
they stop at different epochs. Each epoch's order is logged as a short hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import (
    ModelConfig,
    TrainConfig,
    config_to_dict,
    model_config_from_dict,
    train_config_from_dict,
)
from .data import DatasetManifest, load_aligned_samples
from .errors import (
    ConfigError,
    DivergedLoss,
    EmptyDataset,
    MddError,
    NonFiniteValue,
    ShapeMismatch,
    TooFewSamples,
)
from .head import DEPRESSION, total_loss
from .io import load_arrays, save_arrays
from .network import DepressionNet

ABLATION_FUSIONS = ("add", "multiply", "concat", "mt")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_counts(y_true: np.ndarray, y_pred: np.ndarray) -> tuple[int, int, int, int]:
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch("label/prediction length mismatch")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    return tp, fp, fn, tn


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    """Depression is the positive class; zero-denominator ratios yield 0 and a flag."""
    flags: list[str] = []
    total = tp + fp + fn + tn
    if total == 0:
        flags.append("empty_evaluation_set")
    accuracy = (tp + tn) / total if total else 0.0
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision_zero_denominator"]
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall_zero_denominator"]
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1_zero_denominator"]
    return Metrics(accuracy=accuracy, precision=precision, recall=recall, f1=f1,
                   tp=tp, fp=fp, fn=fn, tn=tn, flags=flags)


# ---------------------------------------------------------------------------
# Data bundles
# ---------------------------------------------------------------------------

@dataclass
class Bundle:
    """A split's samples stacked into tensors."""

    ids: list[str]
    xa: torch.Tensor    # (N, t, d_a_in)
    xv: torch.Tensor    # (N, t, d_v_in)
    mask: torch.Tensor  # (N, t) bool
    y: torch.Tensor     # (N,) long

    @property
    def n(self) -> int:
        return len(self.ids)


def bundle_from_manifest(manifest: DatasetManifest, ids: list[str], t: int) -> Bundle:
    if not ids:
        raise EmptyDataset("no samples in the requested subset")
    samples = load_aligned_samples(manifest, ids, t)
    xa = torch.from_numpy(np.stack([s.acoustic for s in samples])).float()
    xv = torch.from_numpy(np.stack([s.visual for s in samples])).float()
    mask = torch.from_numpy(np.stack([s.real_mask() for s in samples])).bool()
    y = torch.tensor([s.label for s in samples], dtype=torch.long)
    return Bundle(ids=list(ids), xa=xa, xv=xv, mask=mask, y=y)


def batch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Epoch-local shuffling order, independent of training history."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def order_hash(ids_in_order: list[str]) -> str:
    digest = hashlib.sha256("|".join(ids_in_order).encode("utf-8")).hexdigest()
    return digest[:16]


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------

class EarlyStopper:
    """Stops once `patience` epochs pass without a strictly better score
    (lower is better). With improvements only at epochs 1..5 and patience 15,
    training runs through epoch 20 and stops there."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_epoch = 0
        self.best_score = float("inf")

    def update(self, epoch: int, score: float) -> bool:
        if score < self.best_score:
            self.best_score = score
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    mode: str
    fusion: str
    seed: int
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    batch_hashes: list[str] = field(default_factory=list)
    val: dict | None = None
    test: dict | None = None
    folds: list[dict] | None = None
    aggregate: dict | None = None
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


# ---------------------------------------------------------------------------
# Forward / evaluate helpers
# ---------------------------------------------------------------------------

def _forward(model: DepressionNet, bundle: Bundle, idx: np.ndarray | None = None):
    if idx is None:
        xa, xv, mask = bundle.xa, bundle.xv, bundle.mask
    else:
        sel = torch.from_numpy(np.asarray(idx))
        xa, xv, mask = bundle.xa[sel], bundle.xv[sel], bundle.mask[sel]
    if model.mode == "afem_only":
        return model(xa=xa, mask_a=mask)
    if model.mode == "vfem_only":
        return model(xv=xv, mask_v=mask)
    return model(xa=xa, xv=xv, mask_a=mask, mask_v=mask)


def predict_probs(model: DepressionNet, bundle: Bundle, batch_size: int = 32) -> torch.Tensor:
    """Depression probability per sample, eval mode, gradient-free."""
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, bundle.n, batch_size):
            idx = np.arange(start, min(start + batch_size, bundle.n))
            out = _forward(model, bundle, idx)
            chunks.append(out.probs[:, DEPRESSION])
    return torch.cat(chunks)


def evaluate_model(
    model: DepressionNet,
    bundle: Bundle,
    cfg: TrainConfig,
    batch_size: int = 32,
) -> tuple[Metrics, float]:
    """Metrics and full-split loss. The loss averages over the whole split at
    once, so the result does not depend on the evaluation batch size."""
    p1 = predict_probs(model, bundle, batch_size)
    with torch.no_grad():
        loss = total_loss(p1, bundle.y, model, cfg.loss)
    preds = (p1 > 0.5).long().numpy()
    metrics = metrics_from_confusion(*confusion_counts(bundle.y.numpy(), preds))
    return metrics, float(loss)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(
    path: str | Path,
    model: DepressionNet,
    cfg: TrainConfig,
    extra: dict | None = None,
) -> None:
    """Named float32 arrays (parameters + running statistics) plus a JSON
    sidecar at ``<path>.json`` describing the architecture."""
    arrays = {name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()}
    save_arrays(path, arrays)
    meta = {
        "mode": model.mode,
        "fusion": model.fusion_mode,
        "model": config_to_dict(model.cfg),
        "train": config_to_dict(cfg),
    }
    if extra:
        meta.update(extra)
    with open(f"{path}.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str | Path) -> tuple[DepressionNet, dict]:
    arrays = load_arrays(path)
    sidecar = Path(f"{path}.json")
    if not sidecar.exists():
        raise ShapeMismatch(f"checkpoint sidecar {sidecar} not found")
    with open(sidecar, encoding="utf-8") as f:
        meta = json.load(f)
    if "model" in meta:
        cfg = model_config_from_dict(meta["model"])
    elif "train" in meta:
        cfg = train_config_from_dict(meta["train"]).model
    else:
        cfg = ModelConfig()
    model = DepressionNet(cfg, mode=meta.get("mode", "mdd"), fusion=meta.get("fusion", "mt"))
    state = model.state_dict()
    if set(arrays) != set(state):
        missing = sorted(set(state) - set(arrays))
        extra_keys = sorted(set(arrays) - set(state))
        raise ShapeMismatch(
            f"checkpoint/model key mismatch (missing {missing}, unexpected {extra_keys})")
    loaded = {}
    for name, array in arrays.items():
        if tuple(array.shape) != tuple(state[name].shape):
            raise ShapeMismatch(
                f"{name}: checkpoint shape {array.shape} vs model {tuple(state[name].shape)}")
        loaded[name] = torch.from_numpy(array).to(state[name].dtype)
    model.load_state_dict(loaded)
    model.eval()
    return model, meta


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    mode: str = "mdd",
    fusion: str = "mt",
    out_dir: str | Path | None = None,
    log=None,
) -> tuple[DepressionNet, RunReport]:
    """Optimize on the train split, early-stop on the val split, report on the
    test split if present. Returns the model restored to its best epoch."""
    cfg.validate()
    started = time.monotonic()
    t = cfg.model.t
    train_b = bundle_from_manifest(manifest, manifest.ids_in_split("train"), t)
    val_b = bundle_from_manifest(manifest, manifest.ids_in_split("val"), t)
    test_ids = manifest.ids_in_split("test")
    test_b = bundle_from_manifest(manifest, test_ids, t) if test_ids else None

    model = DepressionNet(cfg.model, mode=mode, fusion=fusion, seed=cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr, betas=cfg.adam_betas,
        eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    stopper = EarlyStopper(cfg.patience)
    report = RunReport(mode=mode, fusion=fusion, seed=cfg.seed)
    best_state: dict[str, torch.Tensor] = {}

    for epoch in range(1, cfg.epochs + 1):
        perm = batch_permutation(cfg.seed, epoch, train_b.n)
        report.batch_hashes.append(order_hash([train_b.ids[i] for i in perm]))
        model.train()
        loss_sum, seen = 0.0, 0
        for start in range(0, train_b.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            try:
                out = _forward(model, train_b, idx)
            except NonFiniteValue as exc:
                # parameters blew up on a previous step; the inputs are finite
                raise DivergedLoss(
                    f"non-finite activations at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}: {exc}") from exc
            y = train_b.y[torch.from_numpy(idx)]
            loss = total_loss(out.probs[:, DEPRESSION], y, model, cfg.loss)
            if not torch.isfinite(loss):
                raise DivergedLoss(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch {start // cfg.batch_size} (loss={loss.item()!r})")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * len(idx)
            seen += len(idx)
        train_loss = loss_sum / seen

        val_metrics, val_loss = evaluate_model(model, val_b, cfg)
        score = val_loss if cfg.early_stop_metric == "loss" else -val_metrics.f1
        if stopper.update(epoch, score):
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            report.best_epoch = epoch
            report.best_val_loss = val_loss
        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        report.epochs_run = epoch
        if log:
            log(f"epoch {epoch:3d}  train {train_loss:.4f}  val {val_loss:.4f}"
                f"  best {report.best_epoch}")
        if stopper.should_stop(epoch):
            report.stopped_early = True
            break

    model.load_state_dict(best_state)
    model.eval()
    val_metrics, val_loss = evaluate_model(model, val_b, cfg)
    report.val = val_metrics.to_dict()
    report.best_val_loss = val_loss
    if test_b is not None:
        test_metrics, _ = evaluate_model(model, test_b, cfg)
        report.test = test_metrics.to_dict()
    report.wall_time_s = time.monotonic() - started

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "best.ckpt", model, cfg,
                        extra={"best_epoch": report.best_epoch})
        report.save(out_dir / "report.json")
    return model, report


def evaluate_checkpoint(
    path: str | Path,
    manifest: DatasetManifest,
    split: str = "test",
) -> RunReport:
    """Rebuild the model from a checkpoint and score one split."""
    model, meta = load_checkpoint(path)
    cfg = train_config_from_dict(meta["train"])
    ids = manifest.ids_in_split(split)
    if not ids:
        raise EmptyDataset(f"split {split!r} has no samples")
    bundle = bundle_from_manifest(manifest, ids, cfg.model.t)
    metrics, loss = evaluate_model(model, bundle, cfg)
    report = RunReport(mode=model.mode, fusion=model.fusion_mode, seed=cfg.seed)
    report.test = metrics.to_dict()
    report.best_val_loss = loss
    return report


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def cross_validate(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    k: int = 10,
    mode: str = "mdd",
    fusion: str = "mt",
    log=None,
) -> RunReport:
    """k rotations: fold i tests, fold (i+1) % k validates, the rest train."""
    cfg.validate()
    if not manifest.folds:
        raise TooFewSamples("manifest has no fold assignment")
    assigned = sorted(set(manifest.folds.values()))
    if assigned != list(range(k)):
        raise ConfigError(
            f"manifest assigns folds {assigned}, but k={k} was requested")
    fold_ids = [manifest.ids_in_fold(i) for i in range(k)]
    if any(not ids for ids in fold_ids):
        raise TooFewSamples(f"need {k} non-empty folds")
    started = time.monotonic()
    report = RunReport(mode=mode, fusion=fusion, seed=cfg.seed)
    report.folds = []
    per_metric: dict[str, list[float]] = {m: [] for m in ("accuracy", "precision", "recall", "f1")}
    for i in range(k):
        val_i = (i + 1) % k
        split = {}
        for j, ids in enumerate(fold_ids):
            name = "test" if j == i else ("val" if j == val_i else "train")
            for sample_id in ids:
                split[sample_id] = name
        fold_manifest = DatasetManifest(
            root=manifest.root, entries=manifest.entries, split=split, folds=manifest.folds)
        fold_cfg = train_config_from_dict(config_to_dict(cfg))
        fold_cfg.seed = cfg.seed + i  # distinct batch orders per rotation
        _, fold_report = train(fold_cfg, fold_manifest, mode=mode, fusion=fusion)
        entry = {
            "fold": i,
            "test": fold_report.test,
            "best_epoch": fold_report.best_epoch,
            "epochs_run": fold_report.epochs_run,
        }
        report.folds.append(entry)
        for name in per_metric:
            per_metric[name].append(fold_report.test[name])
        if log:
            log(f"fold {i}: " + "  ".join(
                f"{m} {fold_report.test[m]:.4f}" for m in per_metric))
    report.aggregate = {
        name: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        for name, vals in per_metric.items()
    }
    report.epochs_run = sum(f["epochs_run"] for f in report.folds)
    report.wall_time_s = time.monotonic() - started
    return report


# ---------------------------------------------------------------------------
# Fusion ablation
# ---------------------------------------------------------------------------

def ablate(
    cfg: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path | None = None,
    log=None,
) -> list[RunReport]:
    """Train the full network once per fusion mode with identical seeds and
    batch orders; emit a four-row comparison (CSV + console)."""
    reports = []
    for fusion in ABLATION_FUSIONS:
        _, report = train(cfg, manifest, mode="mdd", fusion=fusion)
        reports.append(report)
        if log:
            m = report.test or {}
            log(f"{fusion:8s}  " + "  ".join(
                f"{k} {m.get(k, float('nan')):.4f}"
                for k in ("accuracy", "precision", "recall", "f1")))
    hashes = {r.batch_hashes[0] for r in reports}
    if len(hashes) != 1:
        raise MddError("ablation runs consumed different batch orders")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(out_dir / "ablation.csv", reports)
        for report in reports:
            report.save(out_dir / f"report_{report.fusion}.json")
    return reports


def write_ablation_csv(path: str | Path, reports: list[RunReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["fusion", "accuracy", "precision", "recall", "f1",
                         "best_epoch", "epochs_run", "batch_hash"])
        for report in reports:
            m = report.test or {}
            writer.writerow([
                report.fusion,
                *(f"{m.get(k, float('nan')):.6f}" for k in
                  ("accuracy", "precision", "recall", "f1")),
                report.best_epoch, report.epochs_run, report.batch_hashes[0],
            ])


def format_ablation_table(reports: list[RunReport]) -> str:
    header = f"{'fusion':10s} {'Acc':>8s} {'Pr':>8s} {'Rc':>8s} {'F1':>8s}"
    lines = [header, "-" * len(header)]
    for report in reports:
        m = report.test or {}
        lines.append(
            f"{report.fusion:10s} " + " ".join(
                f"{m.get(k, float('nan')):8.4f}"
                for k in ("accuracy", "precision", "recall", "f1")))
    return "\n".join(lines)
