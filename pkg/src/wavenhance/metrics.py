"""Objective speech-quality metrics and the dataset evaluation harness.

``stoi`` follows the standard short-time objective intelligibility measure,
``fw_ssnr`` the frequency-weighted segmental SNR with 25 critical bands, and
``srmr_simplified`` is a reduced modulation-energy ratio that is *not*
numerically comparable with the published SRMR toolbox.
"""

import json
import logging
import math
import re
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioBuffer, read_wav, resample, write_wav
from .errors import EvaluationError, InvalidInputError

log = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps

# STOI constants
STOI_RATE = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0

FWSSNR_FLOOR = -10.0
FWSSNR_CEIL = 35.0
FWSSNR_GAMMA = 0.2
# 25 critical-band centers and bandwidths (Hz)
CRIT_CENTERS = np.array([
    50.0, 120.0, 190.0, 260.0, 330.0, 400.0, 470.0, 540.0, 617.372, 703.378, 798.717,
    904.128, 1020.38, 1148.30, 1288.72, 1442.54, 1610.70, 1794.16, 1993.93, 2211.08,
    2446.71, 2701.97, 2978.04, 3276.17, 3597.63,
])
CRIT_BANDWIDTHS = np.array([
    70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 77.3724, 86.0056, 95.3398, 105.411,
    116.256, 127.914, 140.423, 153.823, 168.154, 183.457, 199.776, 217.153, 235.631,
    255.255, 276.072, 298.126, 321.465, 346.136,
])


def _check_pair(enhanced, reference):
    if enhanced.sample_rate_hz != reference.sample_rate_hz:
        raise InvalidInputError("enhanced and reference sample rates differ")
    if len(enhanced) != len(reference):
        raise InvalidInputError(f"length mismatch: {len(enhanced)} vs {len(reference)}")


# ---------------------------------------------------------------- STOI

def _stoi_window():
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x, size, hop):
    starts = range(0, len(x) - size, hop)
    return np.array([x[i:i + size] for i in starts]).reshape(-1, size)


def _overlap_add(frames, hop):
    n, size = frames.shape
    out = np.zeros((n - 1) * hop + size) if n else np.zeros(0)
    for i, f in enumerate(frames):
        out[i * hop:i * hop + size] += f
    return out


def remove_silent_frames(x, y, dyn_range_db=STOI_DYN_RANGE_DB, size=STOI_FRAME, hop=STOI_FRAME // 2):
    """Drop frames more than ``dyn_range_db`` below the loudest reference frame."""
    w = _stoi_window()
    xf = _frames(x, size, hop) * w
    yf = _frames(y, size, hop) * w
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = energy > energy.max(initial=-np.inf) - dyn_range_db
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def third_octave_bands(rate=STOI_RATE, nfft=STOI_NFFT, n_bands=STOI_BANDS, min_freq=STOI_MIN_FREQ):
    """Binary (n_bands, nfft // 2 + 1) matrix grouping FFT bins into 1/3-octave bands."""
    f = np.linspace(0, rate, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, f.size))
    for i in range(n_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def stoi(enhanced: AudioBuffer, reference: AudioBuffer) -> float:
    """Short-time objective intelligibility of ``enhanced`` against ``reference``."""
    _check_pair(enhanced, reference)
    x = resample(reference, STOI_RATE).samples
    y = resample(enhanced, STOI_RATE).samples
    x, y = remove_silent_frames(x, y)
    w = _stoi_window()
    hop = STOI_FRAME // 2
    X = np.fft.rfft(_frames(x, STOI_FRAME, hop) * w, n=STOI_NFFT).T
    Y = np.fft.rfft(_frames(y, STOI_FRAME, hop) * w, n=STOI_NFFT).T
    if X.shape[1] < STOI_SEGMENT:
        raise InvalidInputError(
            f"STOI needs >= {STOI_SEGMENT} non-silent frames (~384 ms); got {X.shape[1]}"
        )
    obm = third_octave_bands()
    xb = np.sqrt(obm @ np.abs(X) ** 2)
    yb = np.sqrt(obm @ np.abs(Y) ** 2)
    n_seg = xb.shape[1] - STOI_SEGMENT + 1
    idx = np.arange(STOI_SEGMENT)[None, :] + np.arange(n_seg)[:, None]
    xs = xb[:, idx].transpose(1, 0, 2)  # (segments, bands, frames)
    ys = yb[:, idx].transpose(1, 0, 2)
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + EPS)
    yp = np.minimum(ys * scale, xs * (1 + 10 ** (-STOI_BETA_DB / 20)))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + EPS
    xs /= np.linalg.norm(xs, axis=2, keepdims=True) + EPS
    return float(np.sum(yp * xs) / (STOI_BANDS * n_seg))


# ---------------------------------------------------------------- FW-SSNR

def critical_band_filters(sample_rate_hz, nfft):
    """Gaussian-shaped critical-band weights, (25, nfft // 2), truncated below -30 dB."""
    half = nfft // 2
    nyq = sample_rate_hz / 2
    j = np.arange(half)
    min_factor = math.exp(-30.0 / (2.0 * 2.303))
    out = np.zeros((CRIT_CENTERS.size, half))
    for i, (cf, bw) in enumerate(zip(CRIT_CENTERS, CRIT_BANDWIDTHS)):
        f0 = cf / nyq * half
        b = bw / nyq * half
        norm = math.log(CRIT_BANDWIDTHS[0]) - math.log(bw)
        row = np.exp(-11 * ((j - math.floor(f0)) / b) ** 2 + norm)
        out[i] = row * (row > min_factor)
    return out


def fwssnr_frames(enhanced: AudioBuffer, reference: AudioBuffer, frame_ms=32.0, overlap=0.75):
    """Per-frame frequency-weighted SNR (dB), clamped to [-10, 35].

    Frames where the reference is exactly silent are skipped.
    """
    _check_pair(enhanced, reference)
    sr = reference.sample_rate_hz
    size = int(round(frame_ms * 1e-3 * sr))
    hop = int(round(size * (1 - overlap)))
    if len(reference) < size:
        raise InvalidInputError(f"FW-SSNR needs at least one {frame_ms:g} ms frame ({size} samples)")
    if not np.any(reference.samples):
        raise InvalidInputError("reference has zero energy")
    nfft = 2 ** math.ceil(math.log2(2 * size))
    half = nfft // 2
    crit = critical_band_filters(sr, nfft)
    window = 0.5 * (1 - np.cos(2 * np.pi * np.arange(1, size + 1) / (size + 1)))
    n_frames = (len(reference) - size) // hop + 1
    idx = np.arange(size)[None, :] + hop * np.arange(n_frames)[:, None]
    xs = np.abs(np.fft.fft(reference.samples[idx] * window, nfft, axis=1))[:, :half]
    ys = np.abs(np.fft.fft(enhanced.samples[idx] * window, nfft, axis=1))[:, :half]
    xsum = xs.sum(axis=1, keepdims=True)
    live = xsum[:, 0] > 0
    xs, ys, xsum = xs[live], ys[live], xsum[live]
    xs = xs / xsum
    ys = ys / np.maximum(ys.sum(axis=1, keepdims=True), EPS)
    xe = xs @ crit.T
    ye = ys @ crit.T
    err = np.maximum((xe - ye) ** 2, EPS)
    weight = xe**FWSSNR_GAMMA
    snr = 10 * np.log10(np.maximum(xe**2, EPS**2) / err)
    per_frame = np.sum(weight * snr, axis=1) / np.sum(weight, axis=1)
    return np.clip(per_frame, FWSSNR_FLOOR, FWSSNR_CEIL)


def fw_ssnr(enhanced: AudioBuffer, reference: AudioBuffer) -> float:
    """Mean frequency-weighted segmental SNR in dB, within [-10, 35]."""
    return float(np.mean(fwssnr_frames(enhanced, reference)))


# ---------------------------------------------------------------- SRMR (simplified)

def erb_space(low, high, n):
    """``n`` center frequencies equally spaced on the ERB-rate scale."""
    erb = lambda f: 21.4 * np.log10(1 + 0.00437 * f)
    inv = lambda e: (10 ** (e / 21.4) - 1) / 0.00437
    return inv(np.linspace(erb(low), erb(high), n))


MOD_CENTERS = np.geomspace(4.0, 128.0, 8)


def modulation_energies(audio: AudioBuffer, n_bands=23, low_hz=125.0, frame_s=0.256, hop_s=0.064):
    """(acoustic band, modulation band) energy matrix of gammatone envelopes."""
    sr = audio.sample_rate_hz
    if len(audio) < sr:
        raise InvalidInputError("srmr_simplified needs at least one second of audio")
    x = audio.samples
    cfs = erb_space(low_hz, min(0.45 * sr, 7000.0), n_bands)
    size, hop = int(frame_s * sr), int(hop_s * sr)
    nfft = 2 ** math.ceil(math.log2(size))
    fmod = np.fft.rfftfreq(nfft, 1 / sr)
    edges = np.sqrt(MOD_CENTERS[:-1] * MOD_CENTERS[1:])
    ratio = MOD_CENTERS[1] / MOD_CENTERS[0]
    edges = np.concatenate([[MOD_CENTERS[0] / np.sqrt(ratio)], edges, [MOD_CENTERS[-1] * np.sqrt(ratio)]])
    band_of = np.digitize(fmod, edges) - 1
    win = np.hamming(size)
    n_frames = (len(x) - size) // hop + 1
    idx = np.arange(size)[None, :] + hop * np.arange(n_frames)[:, None]
    out = np.zeros((n_bands, MOD_CENTERS.size))
    for i, cf in enumerate(cfs):
        b, a = signal.gammatone(cf, "iir", fs=sr)
        env = np.abs(signal.hilbert(signal.lfilter(b, a, x)))
        spec = np.abs(np.fft.rfft(env[idx] * win, nfft, axis=1)) ** 2
        power = spec.sum(axis=0)
        for k in range(MOD_CENTERS.size):
            out[i, k] = power[band_of == k].sum()
    return out


def srmr_simplified(audio: AudioBuffer) -> float:
    """Ratio of 4-23 Hz to 23-165 Hz envelope modulation energy (higher = less reverberant)."""
    e = modulation_energies(audio).sum(axis=0)
    return float(e[:4].sum() / max(e[4:].sum(), EPS))


# ---------------------------------------------------------------- harness

@dataclass
class MetricRow:
    utterance_id: str
    stoi: float
    fwssnr_db: float
    srmr: float
    pesq: float | None = None


@dataclass
class EvalItem:
    """One evaluation utterance; audio may be given as buffers or WAVE paths."""

    utterance_id: str
    degraded: object
    reference: object


@dataclass
class EvaluationResult:
    rows: list
    summary: dict
    failures: list


def external_pesq(command_template, reference: AudioBuffer, degraded: AudioBuffer):
    """Run an external PESQ tool; the template receives ``{reference}`` and ``{degraded}`` paths.

    Returns the last number printed on stdout.
    """
    with tempfile.TemporaryDirectory() as tmp:
        ref_path, deg_path = Path(tmp) / "ref.wav", Path(tmp) / "deg.wav"
        write_wav(ref_path, reference, pcm16=True)
        write_wav(deg_path, degraded, pcm16=True)
        cmd = command_template.format(reference=shlex.quote(str(ref_path)), degraded=shlex.quote(str(deg_path)))
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True, check=True)
    numbers = re.findall(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?", proc.stdout)
    if not numbers:
        raise EvaluationError(f"PESQ command printed no number: {proc.stdout!r}")
    return float(numbers[-1])


def score_pair(utterance_id, enhanced, reference, pesq_command=None) -> MetricRow:
    n = min(len(enhanced), len(reference))
    enhanced = enhanced.with_samples(enhanced.samples[:n])
    reference = reference.with_samples(reference.samples[:n])
    pesq = external_pesq(pesq_command, reference, enhanced) if pesq_command else None
    return MetricRow(
        utterance_id=utterance_id,
        stoi=stoi(enhanced, reference),
        fwssnr_db=fw_ssnr(enhanced, reference),
        srmr=srmr_simplified(enhanced),
        pesq=pesq,
    )


def summarize(rows):
    keys = ["stoi", "fwssnr_db", "srmr"]
    if rows and all(r.pesq is not None for r in rows):
        keys.append("pesq")
    summary = {}
    for k in keys:
        vals = np.array([getattr(r, k) for r in rows], dtype=np.float64)
        summary[k] = {
            "mean": float(vals.mean()) if vals.size else float("nan"),
            "std": float(vals.std()) if vals.size else float("nan"),
            "n": int(vals.size),
        }
    return summary


def write_table(rows, summary, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["utterance_id", "stoi", "fwssnr_db", "srmr", "pesq"]
    with open(out / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for r in rows:
            rec = asdict(r)
            fh.write("\t".join("" if rec[c] is None else str(rec[c]) for c in cols) + "\n")
        means = ["mean"] + [f"{summary[c]['mean']:.6f}" if c in summary else "" for c in cols[1:]]
        fh.write("\t".join(means) + "\n")
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


def _load(item, working_rate):
    if isinstance(item, AudioBuffer):
        return item
    return read_wav(item, working_rate)


def evaluate_dataset(items, enhancer, out_dir=None, pesq_command=None, workers=1, working_rate=16000):
    """Score ``enhancer(degraded)`` against each reference.

    ``enhancer`` is any AudioBuffer -> AudioBuffer callable. Missing input files
    raise an EvaluationError listing all of them before anything is computed;
    per-utterance failures are collected in ``result.failures``.
    """
    items = list(items)
    missing = [
        f"{it.utterance_id}: {p}"
        for it in items
        for p in (it.degraded, it.reference)
        if not isinstance(p, AudioBuffer) and not Path(p).exists()
    ]
    if missing:
        raise EvaluationError(f"{len(missing)} missing input file(s)", missing)

    def run(item):
        try:
            deg = _load(item.degraded, working_rate)
            ref = _load(item.reference, working_rate)
            return score_pair(item.utterance_id, enhancer(deg), ref, pesq_command), None
        except Exception as exc:  # noqa: BLE001 - reported per utterance
            log.warning("evaluation of %s failed: %s", item.utterance_id, exc)
            return None, f"{item.utterance_id}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(it) for it in items]
    rows = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    summary = summarize(rows)
    if out_dir is not None:
        write_table(rows, summary, out_dir)
    return EvaluationResult(rows, summary, failures)
