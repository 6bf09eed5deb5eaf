"""Dataset manifests and a synthetic toy corpus for desk-scale runs."""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioBuffer, WORKING_RATE, read_wav, write_wav
from .errors import ConfigurationError
from .simulation import AssetBank

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    clean_path: str
    rir_path: str | None = None
    noise_path: str | None = None
    split: str = "train"


class Manifest:
    """Ordered list of entries; relative paths resolve against ``root``."""

    def __init__(self, entries, root="."):
        self.entries = list(entries)
        self.root = Path(root)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, path):
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def validate(self):
        problems = []
        owner = {}
        for i, e in enumerate(self.entries):
            if e.split not in SPLITS:
                problems.append(f"line {i + 1}: unknown split {e.split!r}")
            for key in ("clean_path", "rir_path", "noise_path"):
                p = self.resolve(getattr(e, key))
                if p is not None and not p.exists():
                    problems.append(f"line {i + 1}: {key} {p} does not exist")
            prev = owner.setdefault(e.clean_path, e.split)
            if prev != e.split:
                problems.append(f"line {i + 1}: {e.clean_path} appears in both {prev} and {e.split}")
        if problems:
            raise ConfigurationError("invalid manifest:\n  " + "\n  ".join(problems))
        return self

    @classmethod
    def load(cls, path, validate=True):
        path = Path(path)
        entries = []
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                unknown = set(rec) - {"clean_path", "rir_path", "noise_path", "split"}
                if unknown:
                    raise ConfigurationError(f"{path}:{n}: unknown keys {sorted(unknown)}")
                entries.append(ManifestEntry(**rec))
        manifest = cls(entries, root=path.parent)
        return manifest.validate() if validate else manifest

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")

    def asset_bank(self, split=None, working_rate=WORKING_RATE):
        """Load every rir/noise referenced by ``split`` (all splits if None), keyed by path."""
        bank = AssetBank()
        for e in self.entries if split is None else self.split(split):
            if e.rir_path and e.rir_path not in bank.rirs:
                bank.rirs[e.rir_path] = read_wav(self.resolve(e.rir_path), working_rate)
            if e.noise_path and e.noise_path not in bank.noises:
                bank.noises[e.noise_path] = read_wav(self.resolve(e.noise_path), working_rate)
        return bank

    def load_clean(self, entry, working_rate=WORKING_RATE):
        return read_wav(self.resolve(entry.clean_path), working_rate)


def synth_utterance(rng, duration_s=2.0, sr=WORKING_RATE, floor_db=-60.0):
    """Speech-like signal: voiced syllables (gliding f0, formant envelope) with
    occasional unvoiced noise bursts, separated by short pauses.

    A white recording floor ``floor_db`` below the peak keeps pauses from being
    digital silence, as in real close-talk recordings.
    """
    n = int(duration_s * sr)
    out = np.zeros(n)
    fric = signal.butter(4, [2000, 6500], btype="bandpass", fs=sr, output="sos")
    t0 = int(rng.uniform(0.02, 0.1) * sr)
    while t0 < n - int(0.08 * sr):
        if rng.random() < 0.35:
            length = min(int(rng.uniform(0.04, 0.09) * sr), n - t0)
            burst = signal.sosfilt(fric, rng.standard_normal(length))
            burst *= np.hanning(length) * rng.uniform(0.05, 0.15) / (np.std(burst) + 1e-12)
            out[t0:t0 + length] += burst
            t0 += length
        length = min(int(rng.uniform(0.12, 0.3) * sr), n - t0)
        if length < 16:
            break
        t = np.arange(length) / sr
        f0 = rng.uniform(90, 240) * (1 + rng.uniform(-0.2, 0.2) * t / t[-1])
        phase = 2 * np.pi * np.cumsum(f0) / sr
        formants = rng.uniform([300, 900, 2000], [900, 2200, 3500])
        widths = rng.uniform(150, 300, size=3)
        syl = np.zeros(length)
        for k in range(1, 60):
            fk = k * f0.mean()
            if fk > 7000:
                break
            peaks = sum(np.exp(-0.5 * ((fk - fm) / bw) ** 2) for fm, bw in zip(formants, widths))
            amp = (fk / 100.0) ** -0.5 * (0.15 + peaks)
            syl += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        env = np.sin(np.pi * t / t[-1]) ** 2
        out[t0:t0 + length] += env * syl / np.max(np.abs(syl))
        t0 += length + int(rng.uniform(0.03, 0.12) * sr)
    out = 0.5 * out / np.max(np.abs(out))
    return out + 0.5 * 10 ** (floor_db / 20) * rng.standard_normal(n)


def synth_rir(rng, sr=WORKING_RATE, duration_s=0.6, drr_db=(2.0, 10.0), t60_s=(0.2, 0.6)):
    """Exponentially decaying noise tail behind a unit direct-path impulse.

    The tail is scaled so the direct-to-reverberant ratio (direct impulse vs
    everything after it) is drawn uniformly from ``drr_db``.
    """
    n = int(duration_s * sr)
    t60 = rng.uniform(*t60_s)
    delay = int(rng.uniform(0.002, 0.008) * sr)
    t = np.arange(n - delay) / sr
    tail = rng.standard_normal(n - delay) * np.exp(-3 * np.log(10) * t / t60)
    onset = int(0.003 * sr)
    tail[:onset] *= np.linspace(0, 1, onset)
    tail[0] = 0.0
    drr = rng.uniform(*drr_db)
    tail *= np.sqrt(10 ** (-drr / 10) / np.sum(tail ** 2))
    h = np.zeros(n)
    h[delay:] = tail
    h[delay] = 1.0
    return h


def synth_noise(rng, sr=WORKING_RATE, duration_s=3.0):
    """Coloured noise plus an occasional hum component."""
    n = int(duration_s * sr)
    white = rng.standard_normal(n)
    lo = rng.uniform(50, 1500)
    hi = min(lo * rng.uniform(2, 10), 7500)
    sos = signal.butter(2, [lo, hi], btype="bandpass", fs=sr, output="sos")
    x = signal.sosfilt(sos, white) + 0.1 * white
    if rng.random() < 0.5:
        f = rng.choice([50.0, 60.0])
        x += 0.5 * np.std(x) * np.sin(2 * np.pi * f * np.arange(n) / sr)
    return 0.3 * x / np.max(np.abs(x))


def make_toy_dataset(out_dir, seed=0, n_utterances=50, n_rirs=6, n_noises=6, duration_s=2.0):
    """Write a self-contained synthetic corpus and its manifest; returns the manifest path.

    Splits are assigned per clean utterance (80/10/10, each non-empty for n >= 10).
    """
    out = Path(out_dir)
    for sub in ("clean", "rir", "noise"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rirs, noises = [], []
    for i in range(n_rirs):
        rel = f"rir/rir_{i:03d}.wav"
        write_wav(out / rel, AudioBuffer(synth_rir(rng)), pcm16=False)
        rirs.append(rel)
    for i in range(n_noises):
        rel = f"noise/noise_{i:03d}.wav"
        write_wav(out / rel, AudioBuffer(synth_noise(rng)), pcm16=True)
        noises.append(rel)
    order = rng.permutation(n_utterances)
    n_test = max(1, n_utterances // 10) if n_utterances >= 3 else 0
    n_val = max(1, n_utterances // 10) if n_utterances >= 3 else 0
    split_of = {}
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "test" if rank < n_test else "val" if rank < n_test + n_val else "train"
    entries = []
    for i in range(n_utterances):
        rel = f"clean/utt_{i:04d}.wav"
        write_wav(out / rel, AudioBuffer(synth_utterance(rng, duration_s)), pcm16=True)
        entries.append(ManifestEntry(rel, rirs[i % n_rirs], noises[(i * 7 + 3) % n_noises], split_of[i]))
    path = out / "manifest.jsonl"
    Manifest(entries, out).save(path)
    return path
