"""Waveform speech enhancement: dilated-convolution generator, multi-scale
discriminators, data simulation, staged training and objective evaluation."""

__version__ = "0.1.0"

from .audio import AudioBuffer, read_wav, resample, write_wav
from .config import RunConfig, load_config
from .discriminators import DiscriminatorSet, SpecDiscConfig, WaveDiscConfig
from .errors import ConfigurationError, EvaluationError, InvalidInputError, TrainingDiverged
from .generator import Generator, GeneratorConfig, receptive_field
from .losses import LossReport, LossWeights, discriminator_objective, generator_objective
from .metrics import fw_ssnr, srmr_simplified, stoi

__all__ = [
    "AudioBuffer", "read_wav", "resample", "write_wav",
    "RunConfig", "load_config",
    "DiscriminatorSet", "SpecDiscConfig", "WaveDiscConfig",
    "ConfigurationError", "EvaluationError", "InvalidInputError", "TrainingDiverged",
    "Generator", "GeneratorConfig", "receptive_field",
    "LossReport", "LossWeights", "discriminator_objective", "generator_objective",
    "fw_ssnr", "srmr_simplified", "stoi",
]
