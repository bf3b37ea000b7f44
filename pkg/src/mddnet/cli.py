"""Command-line entry point.

Subcommands: synth, train, eval, cv, ablate, grad-check, viz-tsne, viz-weights.
Every command that writes files records a ``resolved-config.json`` (all
defaults filled in) and an ``outputs.json`` manifest under ``--out``.

Exit codes: 0 success, 1 invalid configuration/arguments, 2 runtime failure.
Errors print to stderr as ``error[<kind>]: message``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import (
    SynthConfig,
    TrainConfig,
    TsneConfig,
    config_to_dict,
    load_train_config,
    synth_config_from_dict,
    train_config_from_dict,
)
from .data import load_manifest, make_folds, make_splits, save_manifest
from .errors import (
    ConfigError,
    DuplicateId,
    EmptyDataset,
    MalformedManifest,
    MddError,
    MissingFile,
    PerplexityTooLarge,
    ShapeMismatch,
    TooFewSamples,
    UnknownMode,
)
from .gradcheck import grad_check_random
from .network import FUSIONS, MODES
from .synth import synth_generate
from .train import (
    ablate,
    bundle_from_manifest,
    cross_validate,
    evaluate_checkpoint,
    format_ablation_table,
    load_checkpoint,
    train,
)

log = logging.getLogger("mddnet")

_VALIDATION_ERRORS = (
    ConfigError, MalformedManifest, MissingFile, DuplicateId, UnknownMode,
    TooFewSamples, EmptyDataset, PerplexityTooLarge,
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (TrainConfig schema)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--log-level", default="info",
                   choices=["debug", "info", "warning", "error"])
    p.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE",
                   help="override one config field, e.g. --set model.d_a=32")


def build_parser() -> _Parser:
    parser = _Parser(prog="mddnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--t", type=int, default=256)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--signal", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fmt", choices=["binary", "csv"], default="binary")
    p.add_argument("--folds", type=int, default=10,
                   help="also assign this many CV folds (0 to skip)")
    p.add_argument("--out", required=True)
    p.add_argument("--log-level", default="info",
                   choices=["debug", "info", "warning", "error"])

    p = sub.add_parser("train", help="train one model on the manifest's splits")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--mode", choices=MODES, default="mdd")
    p.add_argument("--fusion", choices=FUSIONS, default="mt")

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="optional output directory")
    p.add_argument("--log-level", default="info",
                   choices=["debug", "info", "warning", "error"])

    p = sub.add_parser("cv", help="k-fold cross-validation")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=MODES, default="mdd")
    p.add_argument("--fusion", choices=FUSIONS, default="mt")

    p = sub.add_parser("ablate", help="compare the four fusion modes")
    _add_common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    _add_common(p, out_required=False)
    p.add_argument("--mode", choices=MODES, default="mdd")
    p.add_argument("--fusion", choices=FUSIONS, default="mt")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=20,
                   help="coordinates sampled per parameter array")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4,
                   help="exit 2 if the worst relative error exceeds this")

    p = sub.add_parser("viz-tsne", help="t-SNE scatter of pooled embeddings")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)

    p = sub.add_parser("viz-weights", help="token-attention heatmap")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=0,
                   help="use only the first N samples of the split (0 = all)")

    return parser


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------

def _apply_overrides(data: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects FIELD=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} does not name a config section")
        node[parts[-1]] = value
    return data


def _resolve_train_config(args) -> TrainConfig:
    if args.config:
        data = config_to_dict(load_train_config(args.config))
    else:
        data = config_to_dict(TrainConfig())
    data = _apply_overrides(data, getattr(args, "set", []))
    cfg = train_config_from_dict(data)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    return cfg


def _require_config(args) -> None:
    if not args.config:
        raise ConfigError(f"{args.command} requires --config")


class _OutDir:
    """Collects produced files and writes the run records on success."""

    def __init__(self, path: str | Path | None):
        self.root = Path(path) if path else None
        self.files: list[str] = []
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def add(self, *names: str | Path) -> None:
        self.files.extend(str(n) for n in names)

    def finish(self, command: str, resolved: dict) -> None:
        if self.root is None:
            return
        with open(self.root / "resolved-config.json", "w", encoding="utf-8") as f:
            json.dump({"command": command, **resolved}, f, indent=2, sort_keys=True)
            f.write("\n")
        listing = sorted({self._relative(p) for p in self.files})
        with open(self.root / "outputs.json", "w", encoding="utf-8") as f:
            json.dump({"command": command, "files": listing}, f, indent=2, sort_keys=True)
            f.write("\n")

    def _relative(self, p: str) -> str:
        path = Path(p)
        try:
            return str(path.relative_to(self.root))
        except ValueError:
            return str(path)


# ---------------------------------------------------------------------------
# Command bodies
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    cfg = synth_config_from_dict({
        "n_samples": args.n, "t": args.t, "class_balance": args.balance,
        "signal_strength": args.signal, "noise_std": args.noise,
        "latent_dim": args.latent_dim, "seed": args.seed,
    })
    out = _OutDir(args.out)
    manifest = synth_generate(cfg, out.root, fmt=args.fmt)
    manifest = make_splits(manifest, seed=cfg.seed)
    if args.folds:
        manifest = make_folds(manifest, k=args.folds, seed=cfg.seed)
    save_manifest(manifest, out.root / "manifest.json")
    out.add("manifest.json")
    for entry in manifest.entries:
        out.add(entry.acoustic_path, entry.visual_path)
    log.info("wrote %d samples to %s", len(manifest), out.root)
    out.finish("synth", {"synth": config_to_dict(cfg), "fmt": args.fmt,
                         "folds": args.folds})
    return 0


def _cmd_train(args) -> int:
    _require_config(args)
    cfg = _resolve_train_config(args)
    manifest = load_manifest(args.data)
    out = _OutDir(args.out)
    _, report = train(cfg, manifest, mode=args.mode, fusion=args.fusion,
                      out_dir=out.root, log=log.info)
    out.add("best.ckpt", "best.ckpt.json", "report.json")
    out.finish("train", {"train": config_to_dict(cfg), "mode": args.mode,
                         "fusion": args.fusion, "data": str(args.data)})
    print(json.dumps({"best_epoch": report.best_epoch, "epochs_run": report.epochs_run,
                      "val_loss": report.best_val_loss, "test": report.test}, indent=2))
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.data)
    report = evaluate_checkpoint(args.checkpoint, manifest, split=args.split)
    print(json.dumps(report.test, indent=2, sort_keys=True))
    if args.out:
        out = _OutDir(args.out)
        report.save(out.root / "metrics.json")
        out.add("metrics.json")
        out.finish("eval", {"checkpoint": str(args.checkpoint),
                            "data": str(args.data), "split": args.split})
    return 0


def _cmd_cv(args) -> int:
    _require_config(args)
    cfg = _resolve_train_config(args)
    manifest = load_manifest(args.data)
    out = _OutDir(args.out)
    report = cross_validate(cfg, manifest, k=args.k, mode=args.mode,
                            fusion=args.fusion, log=log.info)
    report.save(out.root / "cv-report.json")
    out.add("cv-report.json")
    out.finish("cv", {"train": config_to_dict(cfg), "k": args.k,
                      "mode": args.mode, "fusion": args.fusion,
                      "data": str(args.data)})
    print(json.dumps(report.aggregate, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    _require_config(args)
    cfg = _resolve_train_config(args)
    manifest = load_manifest(args.data)
    out = _OutDir(args.out)
    reports = ablate(cfg, manifest, out_dir=out.root, log=log.info)
    out.add("ablation.csv", *(f"report_{r.fusion}.json" for r in reports))
    out.finish("ablate", {"train": config_to_dict(cfg), "data": str(args.data)})
    print(format_ablation_table(reports))
    return 0


def _cmd_grad_check(args) -> int:
    cfg = _resolve_train_config(args)
    result = grad_check_random(cfg.model, mode=args.mode, fusion=args.fusion,
                               batch=args.batch, epsilon=args.epsilon,
                               max_coords=args.coords, seed=cfg.seed)
    for name in sorted(result.per_array):
        print(f"{result.per_array[name]:12.3e}  {name}")
    print(f"worst: {result.worst:.3e} ({result.worst_name})")
    if args.out:
        out = _OutDir(args.out)
        with open(out.root / "grad-check.json", "w", encoding="utf-8") as f:
            json.dump(result.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        out.add("grad-check.json")
        out.finish("grad-check", {"train": config_to_dict(cfg), "mode": args.mode,
                                  "fusion": args.fusion, "epsilon": args.epsilon,
                                  "coords": args.coords, "batch": args.batch})
    if result.worst > args.tol:
        raise MddError(f"gradient check failed: worst {result.worst:.3e} > {args.tol}")
    return 0


def _load_for_viz(args):
    model, meta = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    ids = manifest.ids_in_split(args.split)
    if not ids:
        raise EmptyDataset(f"split {args.split!r} has no samples")
    limit = getattr(args, "limit", 0)
    if limit:
        ids = ids[:limit]
    t = meta.get("model", {}).get("t", 256)
    return model, bundle_from_manifest(manifest, ids, t)


def _cmd_viz_tsne(args) -> int:
    from .viz import emit_tsne  # matplotlib import deferred to the commands that draw

    model, bundle = _load_for_viz(args)
    cfg = TsneConfig(perplexity=args.perplexity, iterations=args.iterations,
                     seed=args.seed if args.seed is not None else 0)
    out = _OutDir(args.out)
    result = emit_tsne(model, bundle, out.root / "tsne", cfg)
    out.add("tsne.png", "tsne.csv")
    out.finish("viz-tsne", {"checkpoint": str(args.checkpoint), "data": str(args.data),
                            "split": args.split, "tsne": config_to_dict(cfg)})
    print(json.dumps({"kl": result.kl, "kl_initial": result.kl_initial,
                      "calibration_error": result.calibration_error}, indent=2))
    return 0


def _cmd_viz_weights(args) -> int:
    from .viz import emit_weight_heatmap

    model, bundle = _load_for_viz(args)
    out = _OutDir(args.out)
    paths = emit_weight_heatmap(model, bundle, out.root / "weights")
    out.add(*(p.name for p in paths.values()))
    out.finish("viz-weights", {"checkpoint": str(args.checkpoint),
                               "data": str(args.data), "split": args.split,
                               "limit": args.limit})
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "cv": _cmd_cv,
    "ablate": _cmd_ablate,
    "grad-check": _cmd_grad_check,
    "viz-tsne": _cmd_viz_tsne,
    "viz-weights": _cmd_viz_weights,
}


def dispatch(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _VALIDATION_ERRORS as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except MddError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 — CLI boundary
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
