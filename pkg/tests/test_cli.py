import json
import re
import subprocess
import sys

import numpy as np
import pytest
import yaml

from conftest import tiny_run_config
from wavenhance.audio import AudioBuffer, read_wav, write_wav
from wavenhance.cli import build_parser, main
from wavenhance.config import dump_config
from wavenhance.corpus import synth_utterance
from wavenhance.training import new_state, save_state

SUBCOMMANDS = ["make-toy-dataset", "simulate", "train", "enhance", "evaluate", "plot"]


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    dump_config(tiny_run_config(), path)
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    return save_state(new_state(tiny_run_config()), tmp_path_factory.mktemp("ck") / "ckpt")


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_documents_every_flag(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    sub = next(a for a in build_parser()._actions if a.dest == "command").choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if action.help is None and action.option_strings != ["-h", "--help"]:
            pytest.fail(f"{command} {action.dest} lacks help text")
    for flag in ("--config", "--seed", "--workers", "--out"):
        assert flag in text


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "wavenhance", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and re.match(r"\d+\.\d+\.\d+", proc.stdout)


def test_make_toy_dataset_and_global_option_placement(tmp_path):
    assert main(["--seed", "7", "make-toy-dataset", "--out", str(tmp_path / "a"), "--n-utterances", "10",
                 "--n-rirs", "2", "--n-noises", "2", "--duration", "0.5"]) == 0
    assert main(["make-toy-dataset", "--seed", "7", "--out", str(tmp_path / "b"), "--n-utterances", "10",
                 "--n-rirs", "2", "--n-noises", "2", "--duration", "0.5"]) == 0
    lines = (tmp_path / "a" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 10
    assert lines == (tmp_path / "b" / "manifest.jsonl").read_text().splitlines()
    assert (tmp_path / "a" / "clean" / "utt_0003.wav").read_bytes() == (tmp_path / "b" / "clean" / "utt_0003.wav").read_bytes()
    cfg = yaml.safe_load((tmp_path / "a" / "effective_config.yaml").read_text())
    assert cfg["train"]["seed"] == 7


def test_simulate_then_evaluate_identity(tmp_path, toy_manifest, tiny_config_file, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(tiny_config_file), "--manifest", str(toy_manifest),
                 "--split", "train", "--augment", "--pairs-per-utterance", "2", "--out", str(sim)]) == 0
    recs = [json.loads(l) for l in (sim / "pairs.jsonl").read_text().splitlines()]
    assert len(recs) == 20 and (sim / recs[0]["degraded"]).exists()
    assert 10 <= recs[0]["spec"]["snr_db"] <= 30
    ev = tmp_path / "ev"
    capsys.readouterr()
    assert main(["evaluate", "identity", "--pairs", str(sim / "pairs.jsonl"), "--mode", "clean",
                 "--out", str(ev), "--workers", "2", "--plot"]) == 0
    printed = json.loads(capsys.readouterr().out)
    summary = json.loads((ev / "summary.json").read_text())
    assert set(summary) == set(printed) == {"stoi", "fwssnr_db", "srmr"}
    assert summary["fwssnr_db"]["mean"] == 35.0 and abs(summary["stoi"]["mean"] - 1) <= 0.01
    assert (ev / "effective_config.yaml").exists() and (ev / "bar_stoi.png").exists()


def test_evaluate_checkpoint_on_manifest(tmp_path, toy_manifest, checkpoint, tiny_config_file):
    out = tmp_path / "ev"
    assert main(["evaluate", str(checkpoint), "--config", str(tiny_config_file),
                 "--manifest", str(toy_manifest), "--split", "test", "--out", str(out)]) == 0
    assert len((out / "metrics.tsv").read_text().splitlines()) == 3


def test_evaluate_exit_codes(tmp_path, capsys):
    short = tmp_path / "short.wav"
    write_wav(short, AudioBuffer(np.full(800, 0.1)))
    ok = tmp_path / "ok.wav"
    write_wav(ok, AudioBuffer(synth_utterance(np.random.default_rng(0), 1.5)))
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text("\n".join(json.dumps(r) for r in [
        {"utterance_id": "ok", "degraded": "ok.wav", "reference": "ok.wav"},
        {"utterance_id": "short", "degraded": "short.wav", "reference": "short.wav"}]) + "\n")
    assert main(["evaluate", "identity", "--pairs", str(pairs), "--out", str(tmp_path / "e")]) == 1
    assert "FAILED short" in capsys.readouterr().err
    pairs.write_text(json.dumps({"utterance_id": "x", "degraded": "gone.wav", "reference": "ok.wav"}) + "\n")
    assert main(["evaluate", "identity", "--pairs", str(pairs), "--out", str(tmp_path / "f")]) == 2
    assert "gone.wav" in capsys.readouterr().err


def test_enhance_duration_and_determinism(tmp_path, checkpoint):
    src = tmp_path / "in.wav"
    write_wav(src, AudioBuffer(0.3 * synth_utterance(np.random.default_rng(1), 3.0)[::2], 8000))
    for name in ("a.wav", "b.wav"):
        assert main(["enhance", str(checkpoint), str(src), str(tmp_path / name)]) == 0
    a = read_wav(tmp_path / "a.wav", working_rate=None)
    assert a.sample_rate_hz == 16000 and abs(len(a) - 48000) <= 1
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()
    assert (tmp_path / "effective_config.yaml").exists()


def test_enhance_reports_corrupt_checkpoint(tmp_path, capsys):
    (tmp_path / "bad").mkdir()
    write_wav(tmp_path / "in.wav", AudioBuffer(np.zeros(100)))
    assert main(["enhance", str(tmp_path / "bad"), str(tmp_path / "in.wav"), str(tmp_path / "o.wav")]) == 2
    assert "not a checkpoint" in capsys.readouterr().err


def test_train_resume_and_plot(tmp_path, toy_manifest, tiny_config_file):
    out = tmp_path / "run"
    base = ["train", "--config", str(tiny_config_file), "--manifest", str(toy_manifest), "--out", str(out)]
    assert main(base + ["--stop-after", "4"]) == 0
    assert main(base + ["--resume"]) == 0
    log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in log] == list(range(1, 11))
    assert (out / "final" / "metadata.json").exists()
    plots = tmp_path / "plots"
    assert main(["plot", "--log", str(out / "train_log.jsonl"), "--out", str(plots)]) == 0
    assert (plots / "curve_spec_post.png").stat().st_size > 0


def test_unknown_config_key_is_a_clean_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("generator:\n  chanels: 3\n")
    assert main(["make-toy-dataset", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "unknown key" in capsys.readouterr().err
