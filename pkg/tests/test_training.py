import hashlib
import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import tiny_run_config
from wavenhance.audio import AudioBuffer
from wavenhance.corpus import Manifest
from wavenhance.errors import ConfigurationError, TrainingDiverged
from wavenhance.training import (
    LOG_FILE,
    PairSource,
    Trainer,
    _rng,
    crop_pair,
    init_discriminators,
    load_generator,
    load_state,
    new_state,
    train_step_discriminators,
    train_step_generator,
)


def read_log(run_dir, drop=("wall_time",)):
    with open(run_dir / LOG_FILE, encoding="utf-8") as fh:
        return [{k: v for k, v in json.loads(line).items() if k not in drop} for line in fh]


def param_hash(module):
    h = hashlib.sha256()
    for t in module.state_dict().values():
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()


def moments_hash(opt):
    h = hashlib.sha256()
    for st in opt.state.values():
        for v in st.values():
            h.update(torch.as_tensor(v).numpy().tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def manifest(toy_manifest):
    return Manifest.load(toy_manifest)


@pytest.fixture(scope="module")
def full_run(manifest, tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    final = Trainer(tiny_run_config(), manifest, out).run()
    return out, final


# ---- data

def test_crop_pair_alignment_and_padding(rng):
    a = AudioBuffer(np.arange(100, dtype=float))
    x, y = crop_pair(a, a, 40, rng)
    assert np.array_equal(x, y) and len(x) == 40 and x[1] - x[0] == 1
    x, y = crop_pair(a, a, 110, rng)
    assert len(x) == 110 and np.array_equal(x[5:105], a.samples) and not x[:5].any() and not x[105:].any()


def test_batches_depend_only_on_key(manifest, tiny_cfg):
    src = PairSource(manifest, "train", tiny_cfg.data.augmentation, 0)
    a = src.batch((0, 2, 5, 0), 3, 4096, augment=True)
    b = src.batch((0, 2, 5, 0), 3, 4096, augment=True, workers=3)
    c = src.batch((0, 2, 6, 0), 3, 4096, augment=True)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    assert not torch.equal(a[0], c[0])
    assert a[0].shape == (3, 4096) and a[0].dtype == torch.float32


def test_unaugmented_pairs_are_fixed_per_utterance(manifest, tiny_cfg):
    src = PairSource(manifest, "train", tiny_cfg.data.augmentation, 0)
    spec = src.base_spec(0)
    assert spec.speed_factor == 1.0 and spec.gain == 1.0 and spec.eq_taps_noise == (1.0,)
    assert 10 <= spec.snr_db <= 30
    d1, _ = src.draw(_rng(1, 2), augment=False)
    assert any(d1 is src.base_pair(i)[0] for i in range(len(src)))


# ---- single steps

def test_generator_step_leaves_discriminators_untouched(manifest, tiny_cfg):
    state = new_state(replace(tiny_cfg, stages=tiny_cfg.stages[2:]))
    init_discriminators(state)
    src = PairSource(manifest, "train", tiny_cfg.data.augmentation, 0)
    x, y = src.batch((0, 3, 0, 1), 2, 4096, False)
    train_step_discriminators(x, y, state)
    before = {n: (param_hash(d), moments_hash(state.d_opts[n])) for n, d in state.discs.named_discriminators()}
    g_before = param_hash(state.generator)
    report = train_step_generator(x, y, state)
    assert report.adv_per_disc[0].item() >= 0
    assert param_hash(state.generator) != g_before
    after = {n: (param_hash(d), moments_hash(state.d_opts[n])) for n, d in state.discs.named_discriminators()}
    assert before == after


def test_discriminator_step_leaves_generator_untouched(manifest, tiny_cfg):
    state = new_state(replace(tiny_cfg, stages=tiny_cfg.stages[2:]))
    init_discriminators(state)
    src = PairSource(manifest, "train", tiny_cfg.data.augmentation, 0)
    x, y = src.batch((0, 3, 0, 1), 2, 4096, False)
    g_hash, g_mom = param_hash(state.generator), moments_hash(state.g_opt)
    losses = train_step_discriminators(x, y, state)
    assert losses == [2.0] * 4  # zero-initialized output layers
    assert (param_hash(state.generator), moments_hash(state.g_opt)) == (g_hash, g_mom)
    assert all(p.grad is None for p in state.generator.parameters())
    assert state.disc_updates == 1


def test_nonfinite_loss_dumps_batch_key(tmp_path, tiny_cfg):
    state = new_state(tiny_cfg)
    x = torch.zeros(1, 4096)
    x[0, 10] = float("nan")
    with pytest.raises(TrainingDiverged) as info:
        train_step_generator(x, torch.zeros(1, 4096), state, key=(0, 1, 7, 0), out_dir=tmp_path)
    dump = json.loads((tmp_path / "diverged.json").read_text())
    assert dump == {"stage": 1, "step": 0, "batch_key": [0, 1, 7, 0]}
    assert info.value.dump_path == tmp_path / "diverged.json"


# ---- schedule

def test_schedule_stage_transitions_and_gating(full_run):
    out, final = full_run
    recs = read_log(out)
    assert [r["stage"] for r in recs] == [1] * 3 + [2] * 3 + [3] * 4
    assert [r["step"] for r in recs] == list(range(1, 11))
    for r in recs:
        adv_fm = [v for k, v in r.items() if k.startswith(("adv_", "fm_"))]
        assert len(adv_fm) == 8
        if r["stage"] < 3:
            assert all(v == 0 for v in adv_fm)
            assert r["lr_discriminators"] == 0.0
    assert [r["lr_generator"] for r in recs[::3][:3]] == [1e-3, 1e-4, 1e-5]
    assert all(r["l1_post"] == 0 and r["spec_post"] == 0 for r in recs[:3])
    assert recs[-1]["disc_updates"] == 2 * 4
    assert all(math.isfinite(v) for r in recs for v in r.values() if isinstance(v, float))
    assert final.name == "final"


def test_schedule_checkpoints_and_validation(full_run, tiny_cfg):
    out, final = full_run
    names = sorted(p.name for p in out.iterdir() if p.name.startswith("ckpt_"))
    assert "ckpt_stage2_step00000003" in names and "ckpt_stage3_step00000006" in names
    assert (out / "best" / "metadata.json").exists()
    vals = [json.loads(l) for l in (out / "validation.jsonl").read_text().splitlines()]
    assert [v["step"] for v in vals] == [0, 4, 8, 10]
    state = load_state(tiny_cfg, final)
    assert state.step == 10 and state.disc_updates == 8 and state.discs is not None
    gen = load_generator(final)
    with torch.no_grad():
        assert gen(torch.zeros(1, 100)).post_postnet.shape == (1, 100)


def test_identical_seeds_give_identical_runs(full_run, manifest, tmp_path):
    out, _ = full_run
    Trainer(tiny_run_config(), manifest, tmp_path).run()
    assert read_log(tmp_path) == read_log(out)


def test_resume_replays_the_uninterrupted_run(full_run, manifest, tmp_path):
    out, _ = full_run
    cfg = tiny_run_config()
    for stop in (2, 3, 4):  # stops inside stage 1, at its boundary and inside stage 3
        Trainer(cfg, manifest, tmp_path, resume=True, stop_after=stop).run()
    Trainer(cfg, manifest, tmp_path, resume=True).run()
    assert read_log(tmp_path) == read_log(out)


def test_resume_with_changed_config_is_rejected(full_run, manifest):
    out, _ = full_run
    cfg = replace(tiny_run_config(), train=replace(tiny_run_config().train, grad_clip=1.0))
    with pytest.raises(ConfigurationError, match="train"):
        Trainer(cfg, manifest, out, resume=True)
