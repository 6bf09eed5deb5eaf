"""Parallel (degraded, clean) pair simulation and on-the-fly augmentation."""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal

from .audio import AudioBuffer, WORKING_RATE, convolve_full, fir_filter
from .errors import ConfigurationError, InvalidInputError

DIRECT_WINDOW_MS = 2.5


@dataclass(frozen=True)
class AugmentationConfig:
    snr_db: tuple = (10.0, 30.0)
    speed: tuple = (0.9, 1.1)
    gain: tuple = (0.25, 1.0)
    drr_offset_db: tuple = (-6.0, 6.0)
    rt60_scale: tuple = (0.5, 1.5)
    eq_bands: int = 8
    eq_max_gain_db: float = 6.0
    eq_taps: int = 2047
    use_reverb: bool = True
    use_noise: bool = True
    use_eq: bool = True
    use_perturbation: bool = True
    rir_ids: tuple = ()
    noise_ids: tuple = ()
    sample_rate_hz: int = WORKING_RATE

    def __post_init__(self):
        for name in ("snr_db", "speed", "gain", "drr_offset_db", "rt60_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} range is inverted: {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.speed[0] <= 0 or self.gain[0] <= 0 or self.rt60_scale[0] <= 0:
            raise ConfigurationError("speed, gain and rt60_scale ranges must be positive")
        object.__setattr__(self, "rir_ids", tuple(self.rir_ids))
        object.__setattr__(self, "noise_ids", tuple(self.noise_ids))


@dataclass(frozen=True)
class SimulationSpec:
    """One sampled degradation recipe. ``None`` ids disable that degradation."""

    rir_id: str | None = None
    noise_id: str | None = None
    snr_db: float = 20.0
    eq_taps_noise: tuple = (1.0,)
    eq_taps_rir: tuple = (1.0,)
    speed_factor: float = 1.0
    gain: float = 1.0
    drr_offset_db: float = 0.0
    rt60_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.speed_factor <= 0 or self.gain <= 0 or self.rt60_scale <= 0:
            raise InvalidInputError("speed_factor, gain and rt60_scale must be positive")
        object.__setattr__(self, "eq_taps_noise", tuple(float(v) for v in self.eq_taps_noise))
        object.__setattr__(self, "eq_taps_rir", tuple(float(v) for v in self.eq_taps_rir))


@dataclass
class AssetBank:
    """Impulse responses and noise recordings addressed by id."""

    rirs: dict = field(default_factory=dict)
    noises: dict = field(default_factory=dict)

    def rir(self, key):
        try:
            return self.rirs[key]
        except KeyError:
            raise InvalidInputError(f"unknown rir id {key!r}") from None

    def noise(self, key):
        try:
            return self.noises[key]
        except KeyError:
            raise InvalidInputError(f"unknown noise id {key!r}") from None


def _energy(x):
    return float(np.sum(np.square(x)))


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float) -> AudioBuffer:
    """``clean + g * noise`` with ``g = rms(clean) / rms(noise) * 10**(-snr_db / 20)``."""
    if len(clean) != len(noise):
        raise InvalidInputError(f"length mismatch: clean {len(clean)} vs noise {len(noise)}")
    rc, rn = clean.rms(), noise.rms()
    if rc == 0 or rn == 0:
        raise InvalidInputError("mix_at_snr needs non-zero clean and noise energy")
    g = (rc / rn) * 10.0 ** (-snr_db / 20.0)
    return clean.with_samples(clean.samples + g * noise.samples)


def apply_rir(clean: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Convolve with ``rir`` and shift by the RIR peak so direct sound stays aligned."""
    if clean.sample_rate_hz != rir.sample_rate_hz:
        raise InvalidInputError(
            f"sample-rate mismatch: clean {clean.sample_rate_hz} Hz vs rir {rir.sample_rate_hz} Hz"
        )
    delay = int(np.argmax(np.abs(rir.samples)))
    wet = convolve_full(clean.samples, rir.samples)
    return clean.with_samples(wet[delay:delay + len(clean)])


def _direct_window(rir: AudioBuffer, window_ms=DIRECT_WINDOW_MS):
    peak = int(np.argmax(np.abs(rir.samples)))
    half = int(round(window_ms * 1e-3 * rir.sample_rate_hz))
    return max(peak - half, 0), min(peak + half + 1, len(rir))


def direct_to_reverberant_db(rir: AudioBuffer, window_ms=DIRECT_WINDOW_MS) -> float:
    """Energy inside the direct-path window over energy outside it, in dB."""
    lo, hi = _direct_window(rir, window_ms)
    h = rir.samples
    direct = _energy(h[lo:hi])
    rest = _energy(h[:lo]) + _energy(h[hi:])
    return 10.0 * np.log10(direct / rest)


def schroeder_t60(samples, sample_rate_hz, fit_db=(-5.0, -25.0)) -> float:
    """T60 from a line fit to the backward-integrated energy decay curve."""
    e = np.cumsum(np.square(np.asarray(samples, dtype=np.float64))[::-1])[::-1]
    if e[0] <= 0:
        raise InvalidInputError("cannot estimate decay of a silent response")
    edc = 10.0 * np.log10(np.maximum(e / e[0], 1e-300))
    hi, lo = fit_db
    sel = np.flatnonzero((edc <= hi) & (edc >= lo))
    if sel.size < 2:
        raise InvalidInputError("decay curve does not span the fit range")
    t = sel / sample_rate_hz
    slope = np.polyfit(t, edc[sel], 1)[0]
    if slope >= 0:
        raise InvalidInputError("energy decay curve is not decreasing")
    return -60.0 / slope


def reshape_rir(rir: AudioBuffer, drr_offset_db: float = 0.0, rt60_scale: float = 1.0,
                window_ms: float = DIRECT_WINDOW_MS) -> AudioBuffer:
    """Shift the direct-to-reverberant ratio and stretch the decay time of an RIR.

    The tail after the direct window is multiplied by an exponential so its decay
    rate becomes ``rate / rt60_scale``; the direct window (peak +/- ``window_ms``)
    is then rescaled so the DRR ends up ``drr_offset_db`` above the original.
    """
    h = rir.samples
    if not np.any(h):
        raise InvalidInputError("impulse response is all zeros")
    if rt60_scale <= 0:
        raise InvalidInputError("rt60_scale must be positive")
    lo, hi = _direct_window(rir, window_ms)
    out = h.copy()
    rest_before = _energy(h[:lo]) + _energy(h[hi:])
    if rt60_scale != 1.0 and hi < len(h) - 1 and _energy(h[hi:]) > 0:
        t60 = schroeder_t60(h[hi:], rir.sample_rate_hz)
        rate = 3.0 * np.log(10.0) / t60  # amplitude decay, 1/s
        t = np.arange(len(h) - hi) / rir.sample_rate_hz
        out[hi:] *= np.exp(rate * (1.0 - 1.0 / rt60_scale) * t)
    rest_after = _energy(out[:lo]) + _energy(out[hi:])
    if rest_before > 0:
        g = np.sqrt(10.0 ** (drr_offset_db / 10.0) * rest_after / rest_before)
    else:
        g = 10.0 ** (drr_offset_db / 20.0)
    out[lo:hi] *= g
    return rir.with_samples(out)


def eq_band_centers(n_bands, sample_rate_hz=WORKING_RATE, f_lo=150.0, f_hi=None):
    f_hi = f_hi or 0.75 * sample_rate_hz / 2
    return np.geomspace(f_lo, f_hi, n_bands)


def multiband_eq_taps(gains_db, sample_rate_hz=WORKING_RATE, n_taps=2047):
    """Linear-phase FIR with flat gain ``gains_db[i]`` around each log-spaced band center.

    Between neighbouring centers the gain ramps linearly in dB over the middle
    half of the log-frequency interval, leaving plateaus around each center.
    """
    gains_db = np.asarray(gains_db, dtype=np.float64)
    n_bands = gains_db.size
    if n_bands < 2:
        raise InvalidInputError("need at least 2 EQ bands")
    if n_taps % 2 == 0:
        raise InvalidInputError("n_taps must be odd for a type-I linear-phase filter")
    nyq = sample_rate_hz / 2
    centers = np.log(eq_band_centers(n_bands, sample_rate_hz))
    knots_f, knots_g = [], []
    for i in range(n_bands):
        left = centers[i] - 0.25 * (centers[i] - centers[i - 1]) if i else centers[i]
        right = centers[i] + 0.25 * (centers[i + 1] - centers[i]) if i < n_bands - 1 else centers[i]
        knots_f += [left, right]
        knots_g += [gains_db[i], gains_db[i]]
    grid = np.linspace(0.0, nyq, 4097)
    logf = np.log(np.maximum(grid, 1.0))
    db = np.interp(logf, knots_f, knots_g)
    return signal.firwin2(n_taps, grid, 10.0 ** (db / 20.0), fs=sample_rate_hz)


def random_multiband_eq(rng, n_bands=8, max_gain_db=6.0, sample_rate_hz=WORKING_RATE, n_taps=2047):
    """Random EQ: band gains uniform in [-max_gain_db, max_gain_db]. Returns (taps, gains_db)."""
    if n_bands < 2:
        raise InvalidInputError("n_bands must be >= 2")
    gains = rng.uniform(-max_gain_db, max_gain_db, size=n_bands)
    return multiband_eq_taps(gains, sample_rate_hz, n_taps), gains


def sample_spec(rng, cfg: AugmentationConfig) -> SimulationSpec:
    """Draw one SimulationSpec; every field is uniform over its configured range."""
    if cfg.use_reverb and not cfg.rir_ids:
        raise ConfigurationError("reverberation enabled but the rir pool is empty")
    if cfg.use_noise and not cfg.noise_ids:
        raise ConfigurationError("noise enabled but the noise pool is empty")
    # fixed draw order keeps specs reproducible regardless of which features are on
    rir_pick = int(rng.integers(max(len(cfg.rir_ids), 1)))
    noise_pick = int(rng.integers(max(len(cfg.noise_ids), 1)))
    snr = float(rng.uniform(*cfg.snr_db))
    speed = float(rng.uniform(*cfg.speed))
    gain = float(rng.uniform(*cfg.gain))
    drr = float(rng.uniform(*cfg.drr_offset_db))
    rt60 = float(rng.uniform(*cfg.rt60_scale))
    # band gains are always drawn; the FIR design is skipped when EQ is off
    gains_noise = rng.uniform(-cfg.eq_max_gain_db, cfg.eq_max_gain_db, size=cfg.eq_bands)
    gains_rir = rng.uniform(-cfg.eq_max_gain_db, cfg.eq_max_gain_db, size=cfg.eq_bands)
    seed = int(rng.integers(2**31 - 1))
    if cfg.use_eq:
        eq_noise = multiband_eq_taps(gains_noise, cfg.sample_rate_hz, cfg.eq_taps)
        eq_rir = multiband_eq_taps(gains_rir, cfg.sample_rate_hz, cfg.eq_taps)
    else:
        eq_noise = eq_rir = (1.0,)
    if not cfg.use_perturbation:
        speed = gain = 1.0
    if not cfg.use_reverb:
        drr, rt60 = 0.0, 1.0
    return SimulationSpec(
        rir_id=cfg.rir_ids[rir_pick] if cfg.use_reverb else None,
        noise_id=cfg.noise_ids[noise_pick] if cfg.use_noise else None,
        snr_db=snr,
        eq_taps_noise=tuple(eq_noise),
        eq_taps_rir=tuple(eq_rir),
        speed_factor=speed,
        gain=gain,
        drr_offset_db=drr,
        rt60_scale=rt60,
        seed=seed,
    )


def speed_perturb(audio: AudioBuffer, factor: float) -> AudioBuffer:
    """Play-rate change: resample by 1/factor and keep the sample-rate label."""
    if factor == 1.0:
        return audio
    ratio = Fraction(factor).limit_denominator(200)
    y = signal.resample_poly(audio.samples, ratio.denominator, ratio.numerator)
    return audio.with_samples(y)


def fit_length(noise: AudioBuffer, length: int, rng) -> AudioBuffer:
    """Loop ``noise`` as needed and crop ``length`` samples from a random offset."""
    reps = -(-(length + len(noise)) // len(noise))
    tiled = np.tile(noise.samples, reps)
    start = int(rng.integers(len(noise)))
    return noise.with_samples(tiled[start:start + length])


def simulate_pair(clean: AudioBuffer, spec: SimulationSpec, assets: AssetBank | None = None):
    """Return ``(degraded, target)``.

    Speed and gain perturbations apply to both sides; reverberation, EQ and
    noise apply to the degraded side only.
    """
    assets = assets or AssetBank()
    x = speed_perturb(clean, spec.speed_factor)
    if spec.gain != 1.0:
        x = x.with_samples(x.samples * spec.gain)
    target = x
    degraded = x
    if spec.rir_id is not None:
        rir = reshape_rir(assets.rir(spec.rir_id), spec.drr_offset_db, spec.rt60_scale)
        if spec.eq_taps_rir != (1.0,):
            rir = convolve_full(rir, np.asarray(spec.eq_taps_rir))
        degraded = apply_rir(x, rir)
    if spec.noise_id is not None:
        rng = np.random.default_rng(spec.seed)
        noise = fit_length(assets.noise(spec.noise_id), len(x), rng)
        if spec.eq_taps_noise != (1.0,):
            noise = fir_filter(noise, spec.eq_taps_noise)
        degraded = mix_at_snr(degraded, noise, spec.snr_db)
    return degraded, target
