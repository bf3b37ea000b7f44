"""Dataset manifests, sample loading, sequence alignment and split/fold assignment.

A manifest is a JSON file::

    {
      "samples": [
        {"id": "v001", "label": "Depression", "acoustic": "a/v001.bin",
         "visual": "v/v001.bin", "length": 300},
        ...
      ],
      "split": {"v001": "train", ...},      # optional
      "folds": {"v001": 0, ...}             # optional
    }

Feature paths are relative to the manifest's directory. Acoustic matrices are
t x 25, visual matrices t x 136, with equal row counts per sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateId,
    EmptyDataset,
    MalformedManifest,
    MissingFile,
    NonFiniteValue,
    ShapeMismatch,
    TooFewSamples,
)
from .io import read_features

ACOUSTIC_WIDTH = 25
VISUAL_WIDTH = 136
LABELS = ("Normal", "Depression")  # index == integer label
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class VlogSample:
    """One labeled vlog: aligned acoustic (t x 25) and visual (t x 136) sequences."""

    id: str
    label: int  # 0 = Normal, 1 = Depression
    acoustic: np.ndarray
    visual: np.ndarray
    mask: np.ndarray | None = None  # per-row is-real flags after padding; None = all real

    @property
    def length(self) -> int:
        return int(self.acoustic.shape[0])

    def real_mask(self) -> np.ndarray:
        if self.mask is not None:
            return self.mask
        return np.ones(self.length, dtype=bool)


@dataclass
class ManifestEntry:
    id: str
    label: int
    acoustic_path: Path
    visual_path: Path
    length: int


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    split: dict[str, str] = field(default_factory=dict)
    folds: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def entry(self, sample_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == sample_id:
                return e
        raise KeyError(f"sample id {sample_id!r} not in manifest")

    def label_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in LABELS}
        for e in self.entries:
            counts[LABELS[e.label]] += 1
        return counts

    def ids_in_split(self, name: str) -> list[str]:
        return [e.id for e in self.entries if self.split.get(e.id) == name]

    def ids_in_fold(self, fold: int) -> list[str]:
        return [e.id for e in self.entries if self.folds.get(e.id) == fold]


def _parse_label(raw) -> int:
    if raw not in LABELS:
        raise MalformedManifest(f"label must be one of {LABELS}, got {raw!r}")
    return LABELS.index(raw)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file; referenced feature files must exist."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise MissingFile(f"cannot open manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{path}: invalid JSON: {exc}") from exc

    if not isinstance(data, dict) or not isinstance(data.get("samples"), list):
        raise MalformedManifest(f"{path}: expected an object with a 'samples' list")

    root = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for item in data["samples"]:
        if not isinstance(item, dict):
            raise MalformedManifest(f"{path}: sample entries must be objects")
        try:
            sample_id = str(item["id"])
            label = _parse_label(item["label"])
            acoustic_rel = str(item["acoustic"])
            visual_rel = str(item["visual"])
            length = int(item["length"])
        except KeyError as exc:
            raise MalformedManifest(f"{path}: sample missing key {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise MalformedManifest(f"{path}: bad sample field: {exc}") from exc
        if length < 1:
            raise MalformedManifest(f"{path}: sample {sample_id!r} has non-positive length")
        if sample_id in seen:
            raise DuplicateId(f"{path}: duplicate sample id {sample_id!r}")
        seen.add(sample_id)
        acoustic_path = root / acoustic_rel
        visual_path = root / visual_rel
        for p in (acoustic_path, visual_path):
            if not p.is_file():
                raise MissingFile(f"{path}: referenced feature file missing: {p}")
        entries.append(ManifestEntry(sample_id, label, acoustic_path, visual_path, length))

    split = _parse_assignment(data.get("split"), seen, SPLIT_NAMES, path, "split")
    folds_raw = _parse_assignment(data.get("folds"), seen, None, path, "folds")
    folds = {k: int(v) for k, v in folds_raw.items()}
    return DatasetManifest(root=root, entries=entries, split=split, folds=folds)


def _parse_assignment(raw, ids: set[str], allowed, path, name) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise MalformedManifest(f"{path}: '{name}' must be an object")
    if set(raw) != ids:
        raise MalformedManifest(f"{path}: '{name}' must assign exactly the sample ids")
    if allowed is not None:
        bad = {v for v in raw.values() if v not in allowed}
        if bad:
            raise MalformedManifest(f"{path}: '{name}' values must be in {allowed}, got {bad}")
    return dict(raw)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    data: dict = {
        "samples": [
            {
                "id": e.id,
                "label": LABELS[e.label],
                "acoustic": str(e.acoustic_path.relative_to(manifest.root)),
                "visual": str(e.visual_path.relative_to(manifest.root)),
                "length": e.length,
            }
            for e in manifest.entries
        ]
    }
    if manifest.split:
        data["split"] = manifest.split
    if manifest.folds:
        data["folds"] = manifest.folds
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=1, sort_keys=True)
        f.write("\n")


def load_sample(manifest: DatasetManifest, sample_id: str) -> VlogSample:
    """Load one sample's feature matrices and validate shape/finiteness contracts."""
    entry = manifest.entry(sample_id)
    acoustic = read_features(entry.acoustic_path)
    visual = read_features(entry.visual_path)
    if acoustic.shape[1] != ACOUSTIC_WIDTH:
        raise ShapeMismatch(
            f"{sample_id}: acoustic width {acoustic.shape[1]}, expected {ACOUSTIC_WIDTH}")
    if visual.shape[1] != VISUAL_WIDTH:
        raise ShapeMismatch(
            f"{sample_id}: visual width {visual.shape[1]}, expected {VISUAL_WIDTH}")
    if acoustic.shape[0] != visual.shape[0]:
        raise ShapeMismatch(
            f"{sample_id}: acoustic rows {acoustic.shape[0]} != visual rows {visual.shape[0]}")
    if not np.isfinite(acoustic).all() or not np.isfinite(visual).all():
        raise NonFiniteValue(f"{sample_id}: feature files contain NaN or Inf")
    return VlogSample(id=sample_id, label=entry.label, acoustic=acoustic, visual=visual)


def align_to_length(sample: VlogSample, t_target: int) -> VlogSample:
    """Truncate to the first ``t_target`` rows or zero-pad at the end, with a mask.

    Idempotent: re-aligning an already aligned sample returns an equal sample.
    """
    if t_target < 1:
        raise ShapeMismatch("t_target must be >= 1")
    t = sample.length
    mask = sample.real_mask()
    if t == t_target:
        return replace(sample, mask=mask.copy())
    if t > t_target:
        return replace(
            sample,
            acoustic=sample.acoustic[:t_target].copy(),
            visual=sample.visual[:t_target].copy(),
            mask=mask[:t_target].copy(),
        )
    pad = t_target - t
    return replace(
        sample,
        acoustic=np.pad(sample.acoustic, ((0, pad), (0, 0))),
        visual=np.pad(sample.visual, ((0, pad), (0, 0))),
        mask=np.pad(mask, (0, pad)),
    )


def _quota_assignment(group_sizes: list[int], target_sizes: list[int]) -> list[list[int]]:
    """Allocate each group's samples across bins, hitting exact bin totals.

    Largest-remainder allocation per (group, bin) quota; per-group counts stay
    within one sample of the exact proportional quota.
    """
    n = sum(group_sizes)
    counts = [[0] * len(target_sizes) for _ in group_sizes]
    remainders = []
    for g, g_size in enumerate(group_sizes):
        for b, b_size in enumerate(target_sizes):
            quota = g_size * b_size / n
            counts[g][b] = int(np.floor(quota))
            remainders.append((quota - counts[g][b], g, b))
    group_left = [g_size - sum(counts[g]) for g, g_size in enumerate(group_sizes)]
    bin_left = [b_size - sum(counts[g][b] for g in range(len(group_sizes)))
                for b, b_size in enumerate(target_sizes)]
    remainders.sort(key=lambda item: (-item[0], item[1], item[2]))
    for _, g, b in remainders:
        if group_left[g] > 0 and bin_left[b] > 0:
            counts[g][b] += 1
            group_left[g] -= 1
            bin_left[b] -= 1
    # Greedy can strand a unit when remainders clash; repair keeps totals exact.
    for g in range(len(group_sizes)):
        while group_left[g] > 0:
            b = next(i for i, left in enumerate(bin_left) if left > 0)
            counts[g][b] += 1
            group_left[g] -= 1
            bin_left[b] -= 1
    return counts


def _grouped_ids(manifest: DatasetManifest) -> list[list[str]]:
    groups: dict[int, list[str]] = {}
    for e in manifest.entries:
        groups.setdefault(e.label, []).append(e.id)
    return [groups[k] for k in sorted(groups)]


def make_splits(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = (7, 1, 2),
    seed: int = 0,
) -> DatasetManifest:
    """Assign a label-stratified train/val/test split.

    Sizes are floor(train_ratio * n) and floor(val_ratio * n), remainder to
    test; assignment is deterministic for a fixed seed.
    """
    if any(r <= 0 for r in ratios):
        raise EmptyDataset("split ratios must be positive")
    n = len(manifest)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    total = sum(ratios)
    n_train = int(np.floor(n * ratios[0] / total))
    n_val = int(np.floor(n * ratios[1] / total))
    n_test = n - n_train - n_val

    rng = np.random.default_rng(seed)
    groups = _grouped_ids(manifest)
    counts = _quota_assignment([len(g) for g in groups], [n_train, n_val, n_test])
    split: dict[str, str] = {}
    for group_ids, group_counts in zip(groups, counts):
        order = rng.permutation(len(group_ids))
        shuffled = [group_ids[i] for i in order]
        start = 0
        for name, count in zip(SPLIT_NAMES, group_counts):
            for sample_id in shuffled[start:start + count]:
                split[sample_id] = name
            start += count
    return replace(manifest, split=split)


def make_folds(manifest: DatasetManifest, k: int = 10, seed: int = 0) -> DatasetManifest:
    """Assign label-stratified cross-validation folds with sizes differing by <= 1."""
    n = len(manifest)
    if k < 2 or n < k:
        raise TooFewSamples(f"need k >= 2 and n >= k, got k={k}, n={n}")
    base, extra = divmod(n, k)
    fold_sizes = [base + (1 if i < extra else 0) for i in range(k)]

    rng = np.random.default_rng(seed)
    groups = _grouped_ids(manifest)
    counts = _quota_assignment([len(g) for g in groups], fold_sizes)
    folds: dict[str, int] = {}
    for group_ids, group_counts in zip(groups, counts):
        order = rng.permutation(len(group_ids))
        shuffled = [group_ids[i] for i in order]
        start = 0
        for fold, count in enumerate(group_counts):
            for sample_id in shuffled[start:start + count]:
                folds[sample_id] = fold
            start += count
    return replace(manifest, folds=folds)


def load_aligned_samples(
    manifest: DatasetManifest,
    ids: list[str],
    t_target: int,
) -> list[VlogSample]:
    return [align_to_length(load_sample(manifest, sample_id), t_target) for sample_id in ids]
