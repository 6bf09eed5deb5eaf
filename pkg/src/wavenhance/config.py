"""Declarative run configuration: nested dataclasses loaded strictly from YAML/JSON."""

import os
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import yaml

from .discriminators import SpecDiscConfig, WaveDiscConfig
from .errors import ConfigurationError
from .generator import GeneratorConfig
from .losses import LossWeights
from .simulation import AugmentationConfig

CONFIG_ENV = "WAVENHANCE_CONFIG"


@dataclass(frozen=True)
class DspConfig:
    working_rate: int = 16000
    floor_eps: float = 1e-5


@dataclass(frozen=True)
class DiscriminatorSetConfig:
    wave: WaveDiscConfig = field(default_factory=WaveDiscConfig)
    spec: SpecDiscConfig = field(default_factory=SpecDiscConfig)


@dataclass(frozen=True)
class DataConfig:
    crop_samples: int = 32000
    batch_size: int = 6
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    workers: int = 1


@dataclass(frozen=True)
class StageConfig:
    stage_id: int
    steps: int
    lr_generator: float
    lr_discriminators: float = 0.0
    use_postnet: bool = True
    use_augmentation: bool = True
    use_adversarial: bool = False
    disc_updates_per_gen_step: int = 0

    def __post_init__(self):
        if self.stage_id not in (1, 2, 3):
            raise ConfigurationError(f"stage_id must be 1, 2 or 3, got {self.stage_id}")
        if self.steps < 0:
            raise ConfigurationError("stage steps must be non-negative")
        if self.use_adversarial and self.disc_updates_per_gen_step < 1:
            raise ConfigurationError("adversarial stages need disc_updates_per_gen_step >= 1")


def default_stages():
    return (
        StageConfig(1, 500_000, 1e-3, use_postnet=False, use_augmentation=False),
        StageConfig(2, 500_000, 1e-4, use_postnet=True, use_augmentation=True),
        StageConfig(3, 50_000, 1e-5, lr_discriminators=1e-3, use_postnet=True,
                    use_augmentation=True, use_adversarial=True, disc_updates_per_gen_step=2),
    )


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    betas_generator: tuple = (0.9, 0.999)
    betas_discriminators: tuple = (0.5, 0.9)
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    checkpoint_every: int = 1000
    validate_every: int = 1000
    history_size: int = 100
    mel_stats_examples: int = 16


@dataclass(frozen=True)
class EvalConfig:
    pesq_command: str | None = None
    window: int = 32000
    overlap: int = 4096
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminators: DiscriminatorSetConfig = field(default_factory=DiscriminatorSetConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)
    stages: tuple = field(default_factory=default_stages)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        ids = [s.stage_id for s in self.stages]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ConfigurationError(f"stages must be ordered 1 -> 2 -> 3 without repeats, got {ids}")

    def scaled(self, factor):
        """Copy with every stage's step count multiplied by ``factor`` (at least 1 step)."""
        stages = tuple(replace(s, steps=max(1, round(s.steps * factor))) for s in self.stages)
        return replace(self, stages=stages)


_ELEMENT_TYPES = {(RunConfig, "stages"): StageConfig}


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def from_dict(cls, data, path="config"):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys at any depth."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{path}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        elem = _ELEMENT_TYPES.get((cls, key))
        if elem is not None:
            kwargs[key] = tuple(from_dict(elem, v, f"{path}.{key}[{i}]") for i, v in enumerate(value))
        elif is_dataclass(hint):
            kwargs[key] = from_dict(hint, value, f"{path}.{key}")
        else:
            kwargs[key] = _tuplify(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def to_dict(obj):
    """Plain-data (lists, dicts, scalars) view of a config, suitable for YAML/JSON."""
    if is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def load_config(path=None) -> RunConfig:
    """Load a RunConfig; falls back to ``$WAVENHANCE_CONFIG``, then to defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return from_dict(RunConfig, data)


def dump_config(cfg: RunConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
