"""Waveform container, WAVE file I/O and non-differentiable filtering helpers."""

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import InvalidInputError

WORKING_RATE = 16000


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono waveform plus its sample rate.

    ``samples`` is stored as a read-only float64 array. Values are nominally in
    [-1, 1] but are not clipped.
    """

    samples: np.ndarray
    sample_rate_hz: int = WORKING_RATE

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidInputError(f"audio must be one-dimensional (mono), got shape {x.shape}")
        if x.size < 1:
            raise InvalidInputError("audio must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("audio contains NaN or Inf")
        if int(self.sample_rate_hz) <= 0 or int(self.sample_rate_hz) != self.sample_rate_hz:
            raise InvalidInputError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self):
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples):
        return AudioBuffer(samples, self.sample_rate_hz)

    def rms(self):
        return float(np.sqrt(np.mean(self.samples**2)))


def as_samples(audio):
    """Return the float64 sample array of an AudioBuffer or array-like."""
    if isinstance(audio, AudioBuffer):
        return audio.samples
    return np.asarray(audio, dtype=np.float64)


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase resampling to ``target_rate``."""
    if audio.sample_rate_hz == target_rate:
        return audio
    ratio = Fraction(target_rate, audio.sample_rate_hz)
    y = signal.resample_poly(audio.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(y, target_rate)


def read_wav(path, working_rate: int | None = WORKING_RATE) -> AudioBuffer:
    """Read a mono 16-bit PCM or 32-bit float WAVE file.

    Integer PCM is scaled to [-1, 1). When ``working_rate`` is given the audio
    is resampled to it.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise InvalidInputError(f"{path}: unsupported sample format {data.dtype}")
    audio = AudioBuffer(x, rate)
    if working_rate is not None:
        audio = resample(audio, working_rate)
    return audio


def write_wav(path, audio: AudioBuffer, pcm16: bool = False):
    """Write ``audio`` clipped to [-1, 1] as 32-bit float (default) or 16-bit PCM."""
    x = np.clip(audio.samples, -1.0, 1.0)
    if pcm16:
        data = np.round(x * 32767.0).astype(np.int16)
    else:
        data = x.astype(np.float32)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), audio.sample_rate_hz, data)


def fir_filter(audio, taps):
    """Causal FIR filtering with the output truncated to the input length.

    Returns an AudioBuffer when given one, otherwise a float64 array.
    """
    h = np.asarray(taps, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise InvalidInputError("taps must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(h)):
        raise InvalidInputError("taps must be finite")
    x = as_samples(audio)
    y = signal.oaconvolve(x, h)[: x.shape[0]] if h.size > 1 else x * h[0]
    return audio.with_samples(y) if isinstance(audio, AudioBuffer) else y


def convolve_full(a, b):
    """Full linear convolution, length ``len(a) + len(b) - 1``.

    If ``b`` is an AudioBuffer (an impulse response) its sample rate must match ``a``.
    """
    if isinstance(a, AudioBuffer) and isinstance(b, AudioBuffer):
        if a.sample_rate_hz != b.sample_rate_hz:
            raise InvalidInputError(
                f"sample-rate mismatch: {a.sample_rate_hz} Hz vs {b.sample_rate_hz} Hz"
            )
    x = as_samples(a)
    h = as_samples(b)
    if x.size == 0 or h.size == 0:
        raise InvalidInputError("convolution operands must be non-empty")
    y = signal.fftconvolve(x, h)
    if isinstance(a, AudioBuffer):
        return a.with_samples(y)
    return y
