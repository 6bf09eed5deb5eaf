"""Differentiable spectral front-ends and multi-rate views (torch).

All functions accept a tensor whose last axis is time, or an AudioBuffer
(converted to a float64 tensor). Gradients flow through every operation.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from .audio import AudioBuffer
from .errors import InvalidInputError

DEFAULT_FLOOR_EPS = 1e-5


def _hann(n, dtype):
    return torch.hann_window(n, periodic=True, dtype=dtype)


def _hamming(n, dtype):
    return torch.hamming_window(n, periodic=True, dtype=dtype)


_WINDOWS = {"hann": _hann, "hamming": _hamming}


@dataclass(frozen=True)
class SpectrogramConfig:
    fft_size: int = 2048
    hop_size: int = 512
    window: str = "hann"
    center_padding: bool = True

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise InvalidInputError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.hop_size <= self.fft_size:
            raise InvalidInputError(f"hop_size must be in (0, fft_size], got {self.hop_size}")
        if self.window not in _WINDOWS:
            raise InvalidInputError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, length):
        if self.center_padding:
            return length // self.hop_size + 1
        if length < self.fft_size:
            return 0
        return (length - self.fft_size) // self.hop_size + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min_hz: float = 20.0
    f_max_hz: float = 8000.0
    sample_rate_hz: int = 16000
    spectrogram: SpectrogramConfig = field(default_factory=lambda: SpectrogramConfig(1024, 256))

    def __post_init__(self):
        if self.n_mels <= 0:
            raise InvalidInputError("n_mels must be positive")
        nyquist = self.sample_rate_hz / 2
        if not 0 <= self.f_min_hz < self.f_max_hz:
            raise InvalidInputError(f"need 0 <= f_min < f_max, got {self.f_min_hz}, {self.f_max_hz}")
        if self.f_max_hz > nyquist:
            raise InvalidInputError(f"f_max {self.f_max_hz} Hz exceeds Nyquist {nyquist} Hz")


LARGE_SPEC = SpectrogramConfig(2048, 512)
SMALL_SPEC = SpectrogramConfig(512, 128)


def as_tensor(audio, dtype=None):
    if isinstance(audio, AudioBuffer):
        return torch.from_numpy(audio.samples.copy()).to(dtype or torch.float64)
    if isinstance(audio, np.ndarray):
        return torch.from_numpy(np.ascontiguousarray(audio)).to(dtype or torch.float64)
    if not torch.is_tensor(audio):
        return torch.as_tensor(audio, dtype=dtype or torch.float64)
    return audio if dtype is None else audio.to(dtype)


def reflect_indices(length, left, right):
    """Source indices for reflection padding that works for any length >= 1.

    Reflection without edge repetition (numpy ``mode="reflect"``), repeated
    as often as needed, so padding may exceed the signal length.
    """
    idx = np.arange(-left, length + right)
    if length == 1:
        return np.zeros_like(idx)
    period = 2 * (length - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= length, period - idx, idx)


def reflect_pad(x, left, right):
    """Reflection-pad the last axis of ``x``; differentiable via gather."""
    if left == 0 and right == 0:
        return x
    idx = torch.from_numpy(reflect_indices(x.shape[-1], left, right)).to(x.device)
    return x.index_select(-1, idx)


def stft(audio, cfg: SpectrogramConfig = LARGE_SPEC):
    """Complex STFT with frames on the second-to-last axis: (..., frames, bins).

    Centered frames use reflection padding of ``fft_size // 2`` on both sides,
    giving ``len // hop + 1`` frames.
    """
    x = as_tensor(audio)
    if x.shape[-1] < 1:
        raise InvalidInputError("cannot take the STFT of empty audio")
    if not x.is_floating_point():
        x = x.to(torch.float64)
    n = cfg.fft_size
    if cfg.center_padding:
        x = reflect_pad(x, n // 2, n // 2)
    elif x.shape[-1] < n:
        raise InvalidInputError(f"uncentered STFT needs at least {n} samples")
    frames = x.unfold(-1, n, cfg.hop_size)
    window = _WINDOWS[cfg.window](n, x.dtype).to(x.device)
    return torch.fft.rfft(frames * window, n=n, dim=-1)


def magnitude(spec):
    return spec.abs()


def log_spectrogram(audio, cfg: SpectrogramConfig = LARGE_SPEC, floor_eps: float = DEFAULT_FLOOR_EPS):
    """``log(|STFT| + floor_eps)``, shape (..., frames, bins)."""
    if not floor_eps > 0:
        raise InvalidInputError(f"floor_eps must be positive, got {floor_eps}")
    return torch.log(magnitude(stft(audio, cfg)) + floor_eps)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(mel: MelConfig):
    """Center frequency (Hz) of each triangular filter."""
    pts = mel_to_hz(np.linspace(hz_to_mel(mel.f_min_hz), hz_to_mel(mel.f_max_hz), mel.n_mels + 2))
    return pts[1:-1]


@lru_cache(maxsize=16)
def _mel_filterbank_np(mel: MelConfig):
    n_fft = mel.spectrogram.fft_size
    bin_hz = np.arange(n_fft // 2 + 1) * mel.sample_rate_hz / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(mel.f_min_hz), hz_to_mel(mel.f_max_hz), mel.n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.max(axis=1) <= 0)
    if empty.size:
        raise InvalidInputError(
            f"mel filters {empty.tolist()} cover no FFT bin; increase fft_size or reduce n_mels"
        )
    fb.setflags(write=False)
    return fb


def mel_filterbank(mel: MelConfig, dtype=torch.float64):
    """Triangular HTK-scale filterbank of shape (n_mels, fft_size // 2 + 1), peak weight 1."""
    return torch.from_numpy(_mel_filterbank_np(mel).copy()).to(dtype)


def mel_spectrogram(audio, mel: MelConfig = MelConfig(), floor_eps: float = DEFAULT_FLOOR_EPS):
    """Log mel magnitude spectrogram, shape (..., n_mels, frames)."""
    if isinstance(audio, AudioBuffer) and audio.sample_rate_hz != mel.sample_rate_hz:
        raise InvalidInputError(
            f"audio at {audio.sample_rate_hz} Hz but mel config expects {mel.sample_rate_hz} Hz"
        )
    if not floor_eps > 0:
        raise InvalidInputError(f"floor_eps must be positive, got {floor_eps}")
    mag = magnitude(stft(audio, mel.spectrogram))
    fb = mel_filterbank(mel, mag.dtype).to(mag.device)
    return torch.log(torch.matmul(fb, mag.transpose(-1, -2)) + floor_eps)


def downsample_by_2(audio):
    """Halve the rate with average pooling (kernel 4, stride 2, reflection pad 1).

    Output length is ``floor(len / 2)``. AudioBuffers come back as AudioBuffers
    at half the sample rate; tensors (..., T) stay tensors.
    """
    if isinstance(audio, AudioBuffer):
        if len(audio) < 4:
            raise InvalidInputError("downsample_by_2 needs at least 4 samples")
        y = downsample_by_2(as_tensor(audio))
        return AudioBuffer(y.numpy(), audio.sample_rate_hz // 2)
    x = audio
    if x.shape[-1] < 4:
        raise InvalidInputError("downsample_by_2 needs at least 4 samples")
    lead = x.shape[:-1]
    y = F.avg_pool1d(reflect_pad(x.reshape(-1, 1, x.shape[-1]), 1, 1), kernel_size=4, stride=2)
    return y.reshape(*lead, y.shape[-1])


def same_padding(length, kernel, stride):
    """(left, right) padding so a strided convolution yields ``ceil(length / stride)`` outputs."""
    out = math.ceil(length / stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2
