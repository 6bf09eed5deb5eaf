"""Three-stage training schedule with alternating generator/discriminator updates.

Every random choice is derived from ``(seed, stage, step, slot)``, so a run
resumed from a checkpoint replays exactly the batches the uninterrupted run
would have drawn.
"""

import json
import logging
import math
import shutil
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .audio import AudioBuffer
from .checkpoint import load_modules, read_metadata, save_checkpoint
from .config import RunConfig, StageConfig, dump_config, to_dict
from .corpus import Manifest
from .discriminators import DISC_NAMES, DiscriminatorSet
from .dsp import mel_spectrogram
from .errors import ConfigurationError, TrainingDiverged
from .generator import Generator
from .losses import (
    LossWeights,
    discriminator_objective,
    generator_objective,
    l1_sample_loss,
    multires_spec_loss,
)
from .simulation import AugmentationConfig, SimulationSpec, sample_spec, simulate_pair

log = logging.getLogger(__name__)

LOG_FILE = "train_log.jsonl"
VALIDATION_FILE = "validation.jsonl"
LATEST_FILE = "LATEST"
MEL_STATS_SLOT = 99  # batch slot reserved for the spec-disc normalization sample


# ---------------------------------------------------------------- data

def _rng(*key):
    return np.random.default_rng([int(k) for k in key])


def crop_pair(degraded, target, length, rng):
    """Aligned random crop; shorter pairs are zero-padded equally on both sides."""
    x, y = degraded.samples, target.samples
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    if n < length:
        left = (length - n) // 2
        pad = (left, length - n - left)
        return np.pad(x, pad), np.pad(y, pad)
    start = int(rng.integers(n - length + 1))
    return x[start:start + length], y[start:start + length]


class PairSource:
    """Simulated training/validation pairs drawn from a manifest.

    Without augmentation each utterance gets one fixed recipe (its manifest
    rir/noise, an SNR drawn once, no EQ or perturbation). With augmentation a
    fresh recipe is drawn per example from the split's rir/noise pools.
    """

    def __init__(self, manifest: Manifest, split: str, aug: AugmentationConfig, seed: int, working_rate=16000):
        self.manifest = manifest
        self.entries = manifest.split(split)
        if not self.entries:
            raise ConfigurationError(f"manifest has no {split!r} entries")
        self.seed = seed
        self.assets = manifest.asset_bank(split, working_rate)
        self.clean = [manifest.load_clean(e, working_rate) for e in self.entries]
        self.aug = replace(aug, rir_ids=tuple(sorted(self.assets.rirs)), noise_ids=tuple(sorted(self.assets.noises)),
                           use_reverb=aug.use_reverb and bool(self.assets.rirs),
                           use_noise=aug.use_noise and bool(self.assets.noises),
                           sample_rate_hz=working_rate)
        self._base_cache = {}

    def __len__(self):
        return len(self.entries)

    def base_spec(self, i) -> SimulationSpec:
        e = self.entries[i]
        rng = _rng(self.seed, 7919, i)
        snr = float(rng.uniform(*self.aug.snr_db))
        return SimulationSpec(
            rir_id=e.rir_path if self.aug.use_reverb else None,
            noise_id=e.noise_path if self.aug.use_noise else None,
            snr_db=snr,
            seed=int(rng.integers(2**31 - 1)),
        )

    def base_pair(self, i):
        if i not in self._base_cache:
            self._base_cache[i] = simulate_pair(self.clean[i], self.base_spec(i), self.assets)
        return self._base_cache[i]

    def draw(self, rng, augment):
        i = int(rng.integers(len(self.entries)))
        if not augment:
            return self.base_pair(i)
        spec = sample_spec(rng, self.aug)
        return simulate_pair(self.clean[i], spec, self.assets)

    def batch(self, key, batch_size, crop, augment, workers=1):
        """(degraded, target) float32 tensors of shape (batch, crop) for a schedule key."""
        def one(j):
            rng = _rng(*key, j)
            d, t = self.draw(rng, augment)
            return crop_pair(d, t, crop, rng)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                pairs = list(pool.map(one, range(batch_size)))
        else:
            pairs = [one(j) for j in range(batch_size)]
        x = torch.from_numpy(np.stack([p[0] for p in pairs])).float()
        y = torch.from_numpy(np.stack([p[1] for p in pairs])).float()
        return x, y


# ---------------------------------------------------------------- state

def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def stage_weights(stage: StageConfig, weights: LossWeights) -> LossWeights:
    if stage.use_adversarial:
        return weights
    return LossWeights(weights.w_l1, weights.w_spec, 0.0, 0.0)


@dataclass
class TrainState:
    cfg: RunConfig
    generator: Generator
    g_opt: torch.optim.Optimizer
    discs: DiscriminatorSet | None = None
    d_opts: dict | None = None
    stage_index: int = 0
    stage_step: int = 0
    step: int = 0
    disc_updates: int = 0
    history: deque = field(default_factory=deque)
    best_val: float = math.inf

    @property
    def stage(self) -> StageConfig:
        # past the end of the schedule, report the last stage
        return self.cfg.stages[min(self.stage_index, len(self.cfg.stages) - 1)]

    def modules(self):
        mods = {"generator": self.generator}
        if self.discs is not None:
            mods.update(self.discs.named_discriminators())
        return mods

    def optimizers(self):
        opts = {"generator": self.g_opt}
        if self.d_opts is not None:
            opts.update(self.d_opts)
        return opts


def new_state(cfg: RunConfig) -> TrainState:
    torch.manual_seed(cfg.train.seed)
    gen = Generator(cfg.generator)
    t = cfg.train
    opt = torch.optim.Adam(gen.parameters(), lr=cfg.stages[0].lr_generator if cfg.stages else 1e-3,
                           betas=tuple(t.betas_generator), eps=t.adam_eps)
    return TrainState(cfg, gen, opt, history=deque(maxlen=t.history_size))


def init_discriminators(state: TrainState, mel_targets=None):
    """Fresh, randomly initialized discriminators with their own optimizers."""
    cfg = state.cfg
    torch.manual_seed(cfg.train.seed * 1000 + 3)
    discs = DiscriminatorSet(cfg.discriminators.wave, cfg.discriminators.spec)
    if mel_targets is not None:
        with torch.no_grad():
            m = mel_spectrogram(mel_targets, cfg.discriminators.spec.mel)
            discs.spec.mel_mean.fill_(float(m.mean()))
            discs.spec.mel_std.fill_(float(m.std()) + 1e-5)
    lr = state.stage.lr_discriminators or 1e-3
    t = cfg.train
    state.discs = discs
    state.d_opts = {
        name: torch.optim.Adam(d.parameters(), lr=lr, betas=tuple(t.betas_discriminators), eps=t.adam_eps)
        for name, d in discs.named_discriminators()
    }


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _check_finite(value, state, key, out_dir):
    if math.isfinite(value):
        return
    dump = None
    if out_dir is not None:
        dump = Path(out_dir) / "diverged.json"
        with open(dump, "w", encoding="utf-8") as fh:
            json.dump({"stage": state.stage.stage_id, "step": state.step, "batch_key": list(key)}, fh)
    raise TrainingDiverged(
        f"non-finite loss at stage {state.stage.stage_id} step {state.step} (batch key {list(key)})", dump
    )


def train_step_generator(x, y, state: TrainState, key=(), out_dir=None):
    """One Adam step of the generator on its stage objective; returns the LossReport."""
    stage = state.stage
    weights = stage_weights(stage, state.cfg.losses)
    gen = state.generator
    gen.train()
    discs = state.discs if stage.use_adversarial else None
    if discs is not None:
        _set_requires_grad(discs, False)
    try:
        state.g_opt.zero_grad(set_to_none=True)
        out = gen(x, use_postnet=stage.use_postnet)
        report = generator_objective(x, y, out, discs, weights, use_postnet=stage.use_postnet)
        _check_finite(float(report.total_g.detach()), state, key, out_dir)
        report.total_g.backward()
        torch.nn.utils.clip_grad_norm_(gen.parameters(), state.cfg.train.grad_clip)
        state.g_opt.step()
    finally:
        if discs is not None:
            _set_requires_grad(discs, True)
    return report


def train_step_discriminators(x, y, state: TrainState, key=(), out_dir=None):
    """One Adam step of every discriminator on its own hinge loss; G is untouched."""
    gen, discs = state.generator, state.discs
    with torch.no_grad():
        fake = gen(x, use_postnet=state.stage.use_postnet).post_postnet
    for opt in state.d_opts.values():
        opt.zero_grad(set_to_none=True)
    losses = discriminator_objective(y, fake, discs)
    total = sum(losses)
    _check_finite(float(total.detach()), state, key, out_dir)
    total.backward()
    for name, d in discs.named_discriminators():
        torch.nn.utils.clip_grad_norm_(d.parameters(), state.cfg.train.grad_clip)
        state.d_opts[name].step()
    state.disc_updates += 1
    return [float(v.detach()) for v in losses]


# ---------------------------------------------------------------- checkpoints

def checkpoint_metadata(state: TrainState):
    return {
        "config": to_dict(state.cfg),
        "step": state.step,
        "stage_id": state.stage.stage_id,
        "stage_index": state.stage_index,
        "stage_step": state.stage_step,
        "disc_updates": state.disc_updates,
        "history": list(state.history),
        "best_val": state.best_val if math.isfinite(state.best_val) else None,
        "torch_rng": torch.get_rng_state().tolist(),
    }


def save_state(state: TrainState, path):
    return save_checkpoint(path, state.modules(), state.optimizers(), checkpoint_metadata(state))


def load_state(cfg: RunConfig, path) -> TrainState:
    """Rebuild a TrainState from ``path``; the stored config must equal ``cfg``."""
    meta = read_metadata(path)
    if meta.get("config") != to_dict(cfg):
        stored = meta.get("config") or {}
        diffs = sorted(k for k in set(stored) | set(to_dict(cfg)) if stored.get(k) != to_dict(cfg).get(k))
        raise ConfigurationError(f"cannot resume from {path}: config differs in {diffs}")
    state = new_state(cfg)
    if "wave_disc_16k" in meta["namespaces"]:
        state.stage_index = meta["stage_index"]
        init_discriminators(state)
    load_modules(path, state.modules(), state.optimizers())
    state.stage_index = meta["stage_index"]
    state.stage_step = meta["stage_step"]
    state.step = meta["step"]
    state.disc_updates = meta["disc_updates"]
    state.history = deque(meta["history"], maxlen=cfg.train.history_size)
    state.best_val = meta["best_val"] if meta["best_val"] is not None else math.inf
    torch.set_rng_state(torch.tensor(meta["torch_rng"], dtype=torch.uint8))
    return state


def load_generator(path, expected_config=None) -> Generator:
    """Generator from any checkpoint directory (config taken from its metadata)."""
    from .config import from_dict
    from .generator import GeneratorConfig

    meta = read_metadata(path)
    try:
        gcfg = from_dict(GeneratorConfig, meta["config"]["generator"], "generator")
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: metadata lacks a generator config ({exc})") from None
    if expected_config is not None and gcfg != expected_config:
        raise ConfigurationError(f"{path}: generator config {gcfg} differs from expected {expected_config}")
    gen = Generator(gcfg)
    load_modules(path, {"generator": gen})
    gen.eval()
    return gen


# ---------------------------------------------------------------- schedule

def validation_losses(gen, source: PairSource):
    """Mean (spec, l1) of the post-postnet output over every validation utterance."""
    gen.eval()
    spec, l1 = [], []
    with torch.no_grad():
        for i in range(len(source)):
            d, t = source.base_pair(i)
            x = torch.tensor(d.samples, dtype=torch.float32)[None]
            y = torch.tensor(t.samples, dtype=torch.float32)[None]
            out = gen(x).post_postnet
            spec.append(float(multires_spec_loss(out, y)))
            l1.append(float(l1_sample_loss(out, y)))
    gen.train()
    return float(np.mean(spec)), float(np.mean(l1))


class Trainer:
    """Runs the stage schedule, writing logs and checkpoints under ``out_dir``."""

    def __init__(self, cfg: RunConfig, manifest: Manifest, out_dir, resume=False, stop_after=None):
        self.cfg = cfg
        self.manifest = manifest
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.stop_after = stop_after
        seed = cfg.train.seed
        rate = cfg.dsp.working_rate
        self.train_src = PairSource(manifest, "train", cfg.data.augmentation, seed, rate)
        self.val_src = PairSource(manifest, "val", cfg.data.augmentation, seed, rate) if manifest.split("val") else None
        latest = self.out / LATEST_FILE
        if resume and latest.exists():
            ckpt = self.out / latest.read_text().strip()
            self.state = load_state(cfg, ckpt)
            log.info("resumed from %s at step %d", ckpt, self.state.step)
        else:
            if resume:
                log.info("no checkpoint in %s; starting fresh", self.out)
            self.state = new_state(cfg)
            for f in (LOG_FILE, VALIDATION_FILE):
                (self.out / f).unlink(missing_ok=True)
        dump_config(cfg, self.out / "effective_config.yaml")

    def _key(self, slot):
        s = self.state
        return (self.cfg.train.seed, s.stage.stage_id, s.stage_step, slot)

    def _batch(self, slot):
        d = self.cfg.data
        return self.train_src.batch(self._key(slot), d.batch_size, d.crop_samples,
                                    self.state.stage.use_augmentation, d.workers)

    def checkpoint(self, tag=None):
        s = self.state
        name = tag or f"ckpt_stage{s.stage.stage_id}_step{s.step:08d}"
        path = save_state(s, self.out / name)
        (self.out / LATEST_FILE).write_text(name)
        return path

    def _start_stage(self):
        s = self.state
        stage = s.stage
        _set_lr(s.g_opt, stage.lr_generator)
        if stage.use_adversarial and s.discs is None:
            d = self.cfg.data
            n = self.cfg.train.mel_stats_examples
            _, y = self.train_src.batch((self.cfg.train.seed, stage.stage_id, 0, MEL_STATS_SLOT), n, d.crop_samples, False)
            init_discriminators(s, y)
        if s.d_opts is not None and stage.lr_discriminators:
            for opt in s.d_opts.values():
                _set_lr(opt, stage.lr_discriminators)
        log.info("stage %d: %d steps", stage.stage_id, stage.steps)

    def _log_step(self, report, d_losses, t0):
        s = self.state
        rec = {"step": s.step, "stage": s.stage.stage_id, "stage_step": s.stage_step}
        rec.update(report.as_record())
        if d_losses is not None:
            rec.update({f"d_{n}": v for n, v in zip(DISC_NAMES, d_losses)})
        rec["lr_generator"] = s.g_opt.param_groups[0]["lr"]
        rec["lr_discriminators"] = s.stage.lr_discriminators if s.stage.use_adversarial else 0.0
        rec["disc_updates"] = s.disc_updates
        rec["wall_time"] = time.time() - t0
        with open(self.out / LOG_FILE, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")
        return rec

    def _validate(self):
        if self.val_src is None:
            return None
        s = self.state
        spec, l1 = validation_losses(s.generator, self.val_src)
        rec = {"step": s.step, "stage": s.stage.stage_id, "val_spec": spec, "val_l1": l1}
        with open(self.out / VALIDATION_FILE, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec) + "\n")
        if spec < s.best_val:
            s.best_val = spec
            save_checkpoint(self.out / "best", {"generator": s.generator}, None, checkpoint_metadata(s))
        return rec

    def run(self):
        """Execute the remaining schedule; returns the final checkpoint path."""
        s = self.state
        t0 = time.time()
        tc = self.cfg.train
        executed = 0
        while s.stage_index < len(self.cfg.stages):
            stage = s.stage
            self._start_stage()
            if s.stage_step == 0 and s.step == 0:
                self._validate()
            while s.stage_step < stage.steps:
                d_losses = None
                if stage.use_adversarial:
                    for k in range(stage.disc_updates_per_gen_step):
                        x, y = self._batch(1 + k)
                        d_losses = train_step_discriminators(x, y, s, self._key(1 + k), self.out)
                x, y = self._batch(0)
                report = train_step_generator(x, y, s, self._key(0), self.out)
                s.history.append(float(report.total_g.detach()))
                s.step += 1
                s.stage_step += 1
                self._log_step(report, d_losses, t0)
                if tc.validate_every and s.step % tc.validate_every == 0:
                    self._validate()
                executed += 1
                if s.stage_step < stage.steps and tc.checkpoint_every and s.step % tc.checkpoint_every == 0:
                    self.checkpoint()
                if self.stop_after is not None and executed >= self.stop_after:
                    return self.checkpoint()
            # stage boundary
            s.stage_index += 1
            s.stage_step = 0
            if s.stage_index < len(self.cfg.stages):
                self.checkpoint()
        self._validate()
        final = self.checkpoint("final")
        return final


def run_schedule(manifest, cfg: RunConfig, out_dir, resume=False):
    if isinstance(manifest, (str, Path)):
        manifest = Manifest.load(manifest)
    return Trainer(cfg, manifest, out_dir, resume=resume).run()
