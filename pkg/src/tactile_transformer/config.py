"""Experiment configuration: one YAML document fully determines a run.

Schema (all fields optional, defaults shown by `default_config()`):

    seed: 0
    out_dir: null
    use_spatial: true        # spatial embeddings on/off (ablation toggle)
    use_temporal: true       # temporal embeddings on/off (ablation toggle)
    data:
      source: synthetic      # "synthetic" | "manifest"
      synthetic: {mode, classes, devices, frames, height, width, noise_std,
                  train_per_class, val_per_class, test_per_class, seed,
                  segment_frames, sample_rate_hz}
      root: null             # manifest source: directory holding sample files
      manifest: null         # manifest source: manifest path
      balance_train_to: null # per-class training count after balancing
      normalize: true        # per-cell z-score from training statistics
    tubelet: {frames: 5, patch: 4}
    encoder: {layers, dim, heads, ff_dim, dropout, seed}
    pretrain: {enabled, mask_ratio, beta, n_comp, epochs, batch_size, lr,
               weight_decay, temporal_task}
    finetune: {epochs, batch_size, lr, weight_decay, track_train_accuracy}

Unknown keys and ill-typed values are rejected with their field path.
"""
from __future__ import annotations

import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .data import SyntheticTaskSpec
from .encoder import EncoderConfig
from .tokenizer import TubeletConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticTaskSpec | None = field(default_factory=SyntheticTaskSpec)
    root: str | None = None
    manifest: str | None = None
    balance_train_to: int | None = None
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "manifest"):
            raise ConfigError(f"data.source must be 'synthetic' or 'manifest', got {self.source!r}")
        if self.source == "synthetic" and self.synthetic is None:
            raise ConfigError("data.synthetic is required when data.source is 'synthetic'")
        if self.source == "manifest" and (self.manifest is None or self.root is None):
            raise ConfigError("data.root and data.manifest are required when data.source is 'manifest'")


@dataclass(frozen=True)
class PretrainConfig:
    enabled: bool = True
    mask_ratio: float = 0.5
    beta: float = 1.0
    n_comp: int = 30
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    temporal_task: bool = True

    def __post_init__(self) -> None:
        if not (0.0 <= self.mask_ratio < 1.0):
            raise ConfigError(f"pretrain.mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.beta < 0:
            raise ConfigError(f"pretrain.beta must be >= 0, got {self.beta}")
        if self.n_comp < 1:
            raise ConfigError(f"pretrain.n_comp must be >= 1, got {self.n_comp}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("pretrain.epochs and pretrain.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"pretrain.lr must be > 0, got {self.lr}")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-4
    track_train_accuracy: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("finetune.epochs and finetune.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"finetune.lr must be > 0, got {self.lr}")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    tubelet: TubeletConfig = field(default_factory=TubeletConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    use_spatial: bool = True
    use_temporal: bool = True
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.data.source == "synthetic" and self.data.synthetic is not None:
            spec = self.data.synthetic
            if spec.frames % self.tubelet.frames != 0:
                raise ConfigError(
                    f"data.synthetic.frames={spec.frames} not divisible by tubelet.frames={self.tubelet.frames}"
                )
            if spec.height % self.tubelet.patch != 0 or spec.width % self.tubelet.patch != 0:
                raise ConfigError(
                    f"data.synthetic grid {spec.height}x{spec.width} not divisible by tubelet.patch={self.tubelet.patch}"
                )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(cls, data, "")

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config document must be a mapping")
        return cls.from_dict(loaded)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return ExperimentConfig.from_yaml(path.read_text(encoding="utf-8"))


def save_config(config: ExperimentConfig, path: Path | str) -> None:
    Path(path).write_text(config.to_yaml(), encoding="utf-8")


# ---------------------------------------------------------------------------
# dict -> dataclass with field-path errors

def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config field: {_join(path, key)}")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], _join(path, f.name))
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(value, target, path: str):
    origin = typing.get_origin(target)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if is_dataclass(target):
        return _from_dict(target, value, path)
    if target is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {value!r}")
        return value
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    return value
