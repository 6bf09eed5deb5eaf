import numpy as np
import pytest
import torch

from wavenhance.corpus import make_toy_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """A small synthetic corpus shared by the slower integration tests."""
    root = tmp_path_factory.mktemp("toy")
    return make_toy_dataset(root, seed=7, n_utterances=12, n_rirs=3, n_noises=3, duration_s=1.5)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def tiny_run_config(stage_steps=(3, 3, 4), **train):
    """Small nets and crops so a full three-stage schedule runs in seconds."""
    from wavenhance.config import DataConfig, DiscriminatorSetConfig, RunConfig, StageConfig, TrainConfig
    from wavenhance.discriminators import SpecDiscConfig, WaveDiscConfig
    from wavenhance.generator import GeneratorConfig

    s1, s2, s3 = stage_steps
    train = {"checkpoint_every": 2, "validate_every": 4, "mel_stats_examples": 2, **train}
    return RunConfig(
        generator=GeneratorConfig(n_layers=3, dilation_cycle=(1, 2, 4), channels=4,
                                  postnet_layers=2, postnet_channels=4, postnet_kernel=4),
        discriminators=DiscriminatorSetConfig(
            WaveDiscConfig(channels=(2, 2, 2, 2, 2, 2, 1), groups=(1, 1, 1, 1, 1, 1, 1)), SpecDiscConfig(channels=4)),
        data=DataConfig(crop_samples=4096, batch_size=2),
        stages=(StageConfig(1, s1, 1e-3, use_postnet=False, use_augmentation=False),
                StageConfig(2, s2, 1e-4),
                StageConfig(3, s3, 1e-5, lr_discriminators=1e-3, use_adversarial=True, disc_updates_per_gen_step=2)),
        train=TrainConfig(**train),
    )


@pytest.fixture
def tiny_cfg():
    return tiny_run_config()


# ---- acceptance reporting: one line per criterion, repeated in the terminal summary

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(capsys):
    """``criterion(n, ok, detail)`` records and prints one pass/fail line, then asserts ``ok``."""

    def report(number, ok, detail):
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[number] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
