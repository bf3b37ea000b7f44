"""Multimodal depression detection from acoustic and visual vlog features.

Reference implementation of a two-stream attention architecture: an acoustic
extractor (content + relative-positional attention), a hierarchical
self-attention visual extractor, mutual-transformer fusion and an
attention-pooled detection head, plus the training/evaluation harness,
synthetic data generator and figure emitters around it.
"""

from .afem import AcousticExtractor
from .config import (
    LossConfig,
    ModelConfig,
    SynthConfig,
    TrainConfig,
    TsneConfig,
    load_train_config,
    save_config,
    synth_config_from_dict,
    train_config_from_dict,
)
from .data import (
    DatasetManifest,
    ManifestEntry,
    VlogSample,
    align_to_length,
    load_manifest,
    load_sample,
    make_folds,
    make_splits,
    save_manifest,
)
from .errors import (
    ConfigError,
    DivergedLoss,
    DuplicateId,
    EmptyDataset,
    IoError,
    MalformedManifest,
    MddError,
    MissingFile,
    NonFiniteValue,
    PerplexityTooLarge,
    ShapeMismatch,
    TooFewSamples,
    UnknownMode,
)
from .fusion import BaselineFusion, FusedRepresentation, MutualTransformerFusion
from .gradcheck import GradCheckResult, grad_check, grad_check_random
from .head import DetectionHead, focal_loss, l2_penalty, smoothed_bce, total_loss
from .io import read_features, write_features
from .network import DepressionNet, FUSIONS, MODES
from .synth import synth_generate
from .train import (
    Metrics,
    RunReport,
    ablate,
    cross_validate,
    evaluate_checkpoint,
    evaluate_model,
    load_checkpoint,
    metrics_from_confusion,
    save_checkpoint,
    train,
)
from .tsne import TsneResult, tsne
from .vfem import VisualExtractor

__version__ = "0.1.0"

__all__ = [
    "AcousticExtractor",
    "BaselineFusion",
    "ConfigError",
    "DatasetManifest",
    "DepressionNet",
    "DetectionHead",
    "DivergedLoss",
    "DuplicateId",
    "EmptyDataset",
    "FUSIONS",
    "FusedRepresentation",
    "GradCheckResult",
    "IoError",
    "LossConfig",
    "MODES",
    "MalformedManifest",
    "ManifestEntry",
    "MddError",
    "Metrics",
    "MissingFile",
    "ModelConfig",
    "MutualTransformerFusion",
    "NonFiniteValue",
    "PerplexityTooLarge",
    "RunReport",
    "ShapeMismatch",
    "SynthConfig",
    "TooFewSamples",
    "TrainConfig",
    "TsneConfig",
    "TsneResult",
    "UnknownMode",
    "VisualExtractor",
    "VlogSample",
    "ablate",
    "align_to_length",
    "cross_validate",
    "evaluate_checkpoint",
    "evaluate_model",
    "focal_loss",
    "grad_check",
    "grad_check_random",
    "l2_penalty",
    "load_checkpoint",
    "load_manifest",
    "load_sample",
    "load_train_config",
    "make_folds",
    "make_splits",
    "metrics_from_confusion",
    "read_features",
    "save_checkpoint",
    "save_config",
    "save_manifest",
    "smoothed_bce",
    "synth_config_from_dict",
    "synth_generate",
    "total_loss",
    "train",
    "train_config_from_dict",
    "tsne",
    "write_features",
]
