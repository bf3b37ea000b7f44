"""Configuration dataclasses with paper-default hyperparameters and JSON round-trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class ModelConfig:
    """Architectural hyperparameters.

    Defaults follow the published dimensions: 25 acoustic descriptors and
    136 landmark coordinates in, 71/139-wide modality embeddings, sequence
    length 256. Derived widths: ``d_m = d_a + d_v`` (common fusion width)
    and ``d_z = 2 * d_m`` (fused token width).
    """

    t: int = 256                  # aligned sequence length
    d_a_in: int = 25              # acoustic descriptor count
    d_v_in: int = 136             # landmark coordinate count
    d_a: int = 71                 # acoustic embedding width
    d_v: int = 139                # visual embedding width
    afem_window: int = 7          # positional-attention neighborhood size (odd)
    vfem_depths: tuple[int, ...] = (1, 2, 4, 2)
    vfem_strides: tuple[int, ...] = (1, 1, 1, 1)
    vfem_heads: int = 1
    vfem_groups: int = 1          # group-norm groups in the patch embedding
    vfem_mlp_ratio: int = 4
    fusion_heads: int = 1         # heads in the joint transformer layer
    fusion_activation: str = "gelu"
    pool_window: int = 3          # stride-1 temporal pooling window before concat
    head_hidden: int = 64         # hidden width of the token-scoring network
    faithful: bool = False        # drop the stability layer-norms inside H-MHSA blocks

    @property
    def d_m(self) -> int:
        return self.d_a + self.d_v

    @property
    def d_z(self) -> int:
        return 2 * (self.d_a + self.d_v)

    def validate(self) -> None:
        for name in ("t", "d_a_in", "d_v_in", "d_a", "d_v", "head_hidden",
                     "vfem_heads", "vfem_groups", "vfem_mlp_ratio",
                     "fusion_heads", "pool_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.afem_window < 1 or self.afem_window % 2 == 0:
            raise ConfigError("model.afem_window must be a positive odd integer")
        if len(self.vfem_depths) != len(self.vfem_strides):
            raise ConfigError("model.vfem_depths and vfem_strides must have equal length")
        if any(d < 0 for d in self.vfem_depths):
            raise ConfigError("model.vfem_depths must be nonnegative")
        if any(s < 1 for s in self.vfem_strides):
            raise ConfigError("model.vfem_strides must be positive")
        if self.d_v % self.vfem_heads != 0:
            raise ConfigError("model.vfem_heads must divide d_v")
        if self.d_v % self.vfem_groups != 0:
            raise ConfigError("model.vfem_groups must divide d_v")
        if self.d_m % self.fusion_heads != 0:
            raise ConfigError("model.fusion_heads must divide d_a + d_v")
        if self.fusion_activation not in ("gelu", "relu", "tanh"):
            raise ConfigError(f"unknown fusion_activation {self.fusion_activation!r}")


@dataclass
class LossConfig:
    """Constants of the composite training loss (smoothed BCE + focal + L2)."""

    eps_smooth: float = 0.1
    phi: float = 1.0
    gamma: float = 2.0
    lam: float = 1e-5
    symmetric_focal: bool = False  # modulate by (1-p_t) instead of the literal (1-p)

    def validate(self) -> None:
        if not 0.0 <= self.eps_smooth < 1.0:
            raise ConfigError("loss.eps_smooth must lie in [0, 1)")
        if self.phi < 0 or self.gamma < 0 or self.lam < 0:
            raise ConfigError("loss.phi, loss.gamma and loss.lam must be nonnegative")


@dataclass
class TrainConfig:
    """Optimization settings; defaults match the published training protocol."""

    lr: float = 1e-4
    weight_decay: float = 0.1
    adam_eps: float = 1e-8
    adam_betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 200
    batch_size: int = 8
    patience: int = 15
    seed: int = 0
    device: str = "cpu"
    early_stop_metric: str = "loss"  # "loss" or "f1" on the validation split
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ConfigError("train.lr and train.adam_eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be positive")
        if not 0 < self.patience < self.epochs:
            raise ConfigError("train.patience must satisfy 0 < patience < epochs")
        if self.early_stop_metric not in ("loss", "f1"):
            raise ConfigError("train.early_stop_metric must be 'loss' or 'f1'")
        self.loss.validate()
        self.model.validate()


@dataclass
class SynthConfig:
    """Synthetic dataset generator settings."""

    n_samples: int = 400
    t: int = 256
    class_balance: float = 0.5    # P(label == Depression)
    latent_dim: int = 8
    signal_strength: float = 3.0
    noise_std: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 1 or self.t < 1 or self.latent_dim < 1:
            raise ConfigError("synth.n_samples, synth.t and synth.latent_dim must be positive")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("synth.class_balance must lie in (0, 1)")
        if self.signal_strength < 0:
            raise ConfigError("synth.signal_strength must be nonnegative")
        if self.noise_std <= 0:
            raise ConfigError("synth.noise_std must be positive")


@dataclass
class TsneConfig:
    """Exact t-SNE settings."""

    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0

    def validate(self) -> None:
        if self.perplexity <= 0:
            raise ConfigError("tsne.perplexity must be positive")
        if self.iterations < 250:
            raise ConfigError("tsne.iterations must be >= 250")
        if self.learning_rate <= 0 or self.early_exaggeration < 1:
            raise ConfigError("tsne.learning_rate must be positive and early_exaggeration >= 1")


_TUPLE_FIELDS = {"vfem_depths", "vfem_strides", "adam_betas"}


def _from_dict(cls, data: dict[str, Any]):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "loss":
            value = _from_dict(LossConfig, value)
        elif key == "model":
            value = _from_dict(ModelConfig, value)
        elif key in _TUPLE_FIELDS:
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def train_config_from_dict(data: dict[str, Any]) -> TrainConfig:
    cfg = _from_dict(TrainConfig, data)
    cfg.validate()
    return cfg


def model_config_from_dict(data: dict[str, Any]) -> ModelConfig:
    cfg = _from_dict(ModelConfig, data)
    cfg.validate()
    return cfg


def synth_config_from_dict(data: dict[str, Any]) -> SynthConfig:
    cfg = _from_dict(SynthConfig, data)
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def load_train_config(path: str | Path) -> TrainConfig:
    """Read a TrainConfig (with nested model/loss sections) from a JSON file."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return train_config_from_dict(data)


def save_config(cfg, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
