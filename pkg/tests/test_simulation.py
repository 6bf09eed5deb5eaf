import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wavenhance.audio import AudioBuffer, convolve_full
from wavenhance.errors import ConfigurationError, InvalidInputError
from wavenhance.simulation import (
    AssetBank,
    AugmentationConfig,
    SimulationSpec,
    apply_rir,
    eq_band_centers,
    mix_at_snr,
    multiband_eq_taps,
    random_multiband_eq,
    reshape_rir,
    sample_spec,
    simulate_pair,
)

SR = 16000


# ---- oracles

def energy_db_ratio(a, b):
    return 10 * np.log10(np.sum(np.square(a)) / np.sum(np.square(b)))


def oracle_drr_db(h, half_window=40):
    peak = int(np.argmax(np.abs(h)))
    lo, hi = max(peak - half_window, 0), peak + half_window + 1
    direct = np.sum(h[lo:hi] ** 2)
    rest = np.sum(h[:lo] ** 2) + np.sum(h[hi:] ** 2)
    return 10 * np.log10(direct / rest)


def oracle_schroeder_t60(h, sr):
    """Backward-integrated decay curve, line fit between -5 and -25 dB, extrapolated to -60."""
    edc = np.cumsum(h[::-1] ** 2)[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    idx = np.where((edc_db <= -5) & (edc_db >= -25))[0]
    t = idx / sr
    slope = np.polyfit(t, edc_db[idx], 1)[0]
    return -60.0 / slope


def response_db(taps, f, sr=SR):
    n = np.arange(len(taps))
    return 20 * np.log10(abs(np.sum(taps * np.exp(-2j * np.pi * f * n / sr))))


def exp_decay_rir(rng, t60, sr=SR, length=None, delay=50):
    length = length or int(1.2 * t60 * sr)
    t = np.arange(length) / sr
    h = rng.standard_normal(length) * np.exp(-3 * np.log(10) * t / t60) * 0.1
    h[:delay] = 0
    h[delay] = 1.0
    return h


# ---- mix_at_snr

def test_mix_at_snr_gain_examples():
    c = AudioBuffer(np.full(100, 0.1))
    n = AudioBuffer(np.tile([0.1, -0.1], 50))
    np.testing.assert_allclose(mix_at_snr(c, n, 20).samples - c.samples, 0.1 * n.samples, atol=1e-15)
    np.testing.assert_allclose(mix_at_snr(c, n, 0).samples - c.samples, n.samples, atol=1e-15)


def test_mix_at_snr_errors():
    with pytest.raises(InvalidInputError):
        mix_at_snr(AudioBuffer(np.ones(10)), AudioBuffer(np.zeros(10)), 10)
    with pytest.raises(InvalidInputError):
        mix_at_snr(AudioBuffer(np.zeros(10)), AudioBuffer(np.ones(10)), 10)
    with pytest.raises(InvalidInputError):
        mix_at_snr(AudioBuffer(np.ones(10)), AudioBuffer(np.ones(11)), 10)


@settings(max_examples=50, deadline=None)
@given(snr=st.floats(-20, 60), seed=st.integers(0, 2**31 - 1), n=st.integers(2, 3000))
def test_mix_at_snr_achieves_requested_snr(snr, seed, n):
    r = np.random.default_rng(seed)
    c, z = AudioBuffer(r.standard_normal(n) * r.uniform(0.01, 1)), AudioBuffer(r.standard_normal(n))
    residual = mix_at_snr(c, z, snr).samples - c.samples
    assert abs(energy_db_ratio(c.samples, residual) - snr) < 1e-6


# ---- apply_rir

def test_apply_rir_unit_and_delayed_impulse(rng):
    c = AudioBuffer(rng.standard_normal(500))
    np.testing.assert_array_equal(apply_rir(c, AudioBuffer(np.array([1.0]))).samples, c.samples)
    delayed = np.zeros(37)
    delayed[23] = 1.0
    np.testing.assert_allclose(apply_rir(c, AudioBuffer(delayed)).samples, c.samples, atol=1e-12)


def test_apply_rir_matches_convolution_oracle(rng):
    c = rng.standard_normal(2000)
    h = exp_decay_rir(rng, 0.05, length=900, delay=31)
    full = np.convolve(c, h)
    d = int(np.argmax(np.abs(h)))
    np.testing.assert_allclose(apply_rir(AudioBuffer(c), AudioBuffer(h)).samples, full[d:d + 2000], atol=1e-9)


def test_apply_rir_rate_mismatch():
    with pytest.raises(InvalidInputError):
        apply_rir(AudioBuffer(np.ones(10)), AudioBuffer(np.ones(3), 8000))


# ---- reshape_rir

def test_reshape_rir_identity(rng):
    h = AudioBuffer(exp_decay_rir(rng, 0.3))
    np.testing.assert_allclose(reshape_rir(h, 0.0, 1.0).samples, h.samples, atol=1e-9)


def test_reshape_rir_drr_offset(rng):
    h = exp_decay_rir(rng, 0.3)
    for offset in (6.0, -6.0, 3.0):
        out = reshape_rir(AudioBuffer(h), offset, 1.0).samples
        assert abs(oracle_drr_db(out) - oracle_drr_db(h) - offset) < 0.5


def test_reshape_rir_halves_t60(rng):
    h = exp_decay_rir(rng, 0.4, length=int(0.8 * SR))
    before = oracle_schroeder_t60(h[100:], SR)
    assert abs(before - 0.4) / 0.4 < 0.1
    out = reshape_rir(AudioBuffer(h), 0.0, 0.5).samples
    after = oracle_schroeder_t60(out[100:], SR)
    assert abs(after / before - 0.5) < 0.05


def test_reshape_rir_rejects_zero_rir():
    with pytest.raises(InvalidInputError):
        reshape_rir(AudioBuffer(np.zeros(100)))


# ---- EQ

def test_flat_eq_is_near_delta():
    taps = multiband_eq_taps(np.zeros(8))
    centers = eq_band_centers(8)
    assert all(abs(response_db(taps, f)) < 0.5 for f in centers)
    assert np.argmax(np.abs(taps)) == len(taps) // 2


def test_random_eq_response_at_band_centers():
    for seed in range(5):
        taps, gains = random_multiband_eq(np.random.default_rng(seed))
        for f, g in zip(eq_band_centers(8), gains):
            assert abs(response_db(taps, f) - g) < 1.0
        assert np.all(np.abs(gains) <= 6.0)
        np.testing.assert_allclose(taps, taps[::-1], atol=1e-12)  # linear phase


def test_random_eq_deterministic_and_validated():
    a, _ = random_multiband_eq(np.random.default_rng(3))
    b, _ = random_multiband_eq(np.random.default_rng(3))
    assert np.array_equal(a, b)
    with pytest.raises(InvalidInputError):
        random_multiband_eq(np.random.default_rng(0), n_bands=1)


# ---- sample_spec

AUG = AugmentationConfig(rir_ids=("r0", "r1"), noise_ids=("n0",), use_eq=False)


def test_sample_spec_distributions():
    specs = [sample_spec(np.random.default_rng(i), AUG) for i in range(10000)]
    snr = np.array([s.snr_db for s in specs])
    assert snr.min() >= 10 and snr.max() <= 30
    assert stats.kstest(snr, stats.uniform(10, 20).cdf).statistic < 0.02
    speed = np.array([s.speed_factor for s in specs])
    assert speed.min() >= 0.9 and speed.max() <= 1.1
    gain = np.array([s.gain for s in specs])
    assert gain.min() >= 0.25 and gain.max() <= 1.0
    assert {s.rir_id for s in specs} == {"r0", "r1"}


def test_sample_spec_deterministic():
    cfg = AugmentationConfig(rir_ids=("r0",), noise_ids=("n0",))
    assert sample_spec(np.random.default_rng(11), cfg) == sample_spec(np.random.default_rng(11), cfg)


def test_eq_toggle_does_not_shift_other_draws():
    on = sample_spec(np.random.default_rng(4), AugmentationConfig(rir_ids=("r",), noise_ids=("n",)))
    off = sample_spec(np.random.default_rng(4), AUG.__class__(rir_ids=("r",), noise_ids=("n",), use_eq=False))
    assert (on.snr_db, on.seed, on.speed_factor) == (off.snr_db, off.seed, off.speed_factor)


def test_sample_spec_empty_pools():
    with pytest.raises(ConfigurationError):
        sample_spec(np.random.default_rng(0), AugmentationConfig(noise_ids=("n",)))
    with pytest.raises(ConfigurationError):
        sample_spec(np.random.default_rng(0), AugmentationConfig(rir_ids=("r",)))
    spec = sample_spec(np.random.default_rng(0), AugmentationConfig(use_reverb=False, use_noise=False))
    assert spec.rir_id is None and spec.noise_id is None


def test_augmentation_config_validation():
    with pytest.raises(ConfigurationError):
        AugmentationConfig(snr_db=(30, 10))
    with pytest.raises(ConfigurationError):
        AugmentationConfig(speed=(0.0, 1.0))


# ---- simulate_pair

def _assets(rng):
    return AssetBank(rirs={"room": AudioBuffer(exp_decay_rir(rng, 0.2))},
                     noises={"hum": AudioBuffer(rng.standard_normal(7000))})


def test_simulate_pair_identity_pipeline(rng):
    clean = AudioBuffer(rng.standard_normal(3000) * 0.1)
    assets = AssetBank(rirs={"delta": AudioBuffer(np.array([1.0]))})
    deg, tgt = simulate_pair(clean, SimulationSpec(rir_id="delta"), assets)
    np.testing.assert_array_equal(tgt.samples, clean.samples)
    np.testing.assert_allclose(deg.samples, clean.samples, atol=1e-12)


def test_simulate_pair_noise_at_requested_snr(rng):
    clean = AudioBuffer(rng.standard_normal(16000) * 0.1)
    assets = _assets(rng)
    spec = SimulationSpec(rir_id="room", noise_id="hum", snr_db=10.0, seed=5)
    deg, _ = simulate_pair(clean, spec, assets)
    reverberant = apply_rir(clean, assets.rir("room"))
    assert abs(energy_db_ratio(reverberant.samples, deg.samples - reverberant.samples) - 10.0) < 0.1


def test_simulate_pair_deterministic(rng):
    clean = AudioBuffer(rng.standard_normal(8000) * 0.1)
    assets = _assets(rng)
    spec = sample_spec(np.random.default_rng(9), AugmentationConfig(rir_ids=("room",), noise_ids=("hum",)))
    a, b = simulate_pair(clean, spec, assets), simulate_pair(clean, spec, assets)
    assert np.array_equal(a[0].samples, b[0].samples) and np.array_equal(a[1].samples, b[1].samples)


@pytest.mark.parametrize("length", [4000, 32000, 50000])
def test_simulate_pair_lengths_match(length, rng):
    clean = AudioBuffer(rng.standard_normal(length) * 0.1)
    assets = _assets(rng)
    spec = sample_spec(np.random.default_rng(length), AugmentationConfig(rir_ids=("room",), noise_ids=("hum",)))
    deg, tgt = simulate_pair(clean, spec, assets)
    assert len(deg) == len(tgt)
    assert abs(len(tgt) - length / spec.speed_factor) <= 2


def test_perturbations_apply_to_both_sides(rng):
    clean = AudioBuffer(rng.standard_normal(4000) * 0.1)
    spec = SimulationSpec(gain=0.5, speed_factor=1.0)
    deg, tgt = simulate_pair(clean, spec)
    np.testing.assert_allclose(tgt.samples, 0.5 * clean.samples)
    np.testing.assert_array_equal(deg.samples, tgt.samples)


def test_simulate_pair_unknown_asset(rng):
    with pytest.raises(InvalidInputError):
        simulate_pair(AudioBuffer(np.ones(100)), SimulationSpec(noise_id="missing"))


def test_eq_on_rir_changes_degraded_only(rng):
    clean = AudioBuffer(rng.standard_normal(4000) * 0.1)
    assets = AssetBank(rirs={"delta": AudioBuffer(np.array([1.0]))})
    taps = multiband_eq_taps(np.array([6.0, -6, 6, -6, 6, -6, 6, -6]), n_taps=255)
    deg, tgt = simulate_pair(clean, SimulationSpec(rir_id="delta", eq_taps_rir=tuple(taps)), assets)
    expected = convolve_full(clean, taps).samples[127:127 + 4000]
    np.testing.assert_allclose(deg.samples, expected, atol=1e-9)
    np.testing.assert_array_equal(tgt.samples, clean.samples)
