"""Session fixtures shared by the slow synthetic-data tests.

The trained QCNN is produced through the command line (``synth`` then
``train`` on defaults at +6 dB), so a single 50-epoch run serves the CLI
end-to-end check, the accuracy criterion and the qttention experiments.
"""

import time
from typing import NamedTuple

import numpy as np
import pytest

from qcnn.checkpoint import load_checkpoint
from qcnn.cli import main
from qcnn.signals import load_dataset, with_noise

TRAIN_SNR_DB = 6.0
TRAIN_SEED = 0

# lines appended by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


class TrainedRun(NamedTuple):
    model: object
    noisy: object
    ckpt: object
    seconds: float


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("run")


@pytest.fixture(scope="session")
def synthetic_path(workdir):
    """Default ten-class rig, 1000 windows per class, split 0.5/0.25/0.25."""
    path = workdir / "synthetic.qbrg"
    assert main(["synth", "--out", str(path), "--seed", "0"]) == 0
    return path


@pytest.fixture(scope="session")
def synthetic_dataset(synthetic_path):
    return load_dataset(synthetic_path)


@pytest.fixture(scope="session")
def trained_qcnn(workdir, synthetic_path, synthetic_dataset):
    """QCNN trained 50 epochs at +6 dB, with its noisy dataset, checkpoint path and wall time."""
    ckpt = workdir / "qcnn.qckp"
    start = time.perf_counter()
    code = main(["train", "--data", str(synthetic_path), "--profile", "qcnn", "--snr", str(TRAIN_SNR_DB),
                 "--seed", str(TRAIN_SEED), "--out-ckpt", str(ckpt)])
    assert code == 0
    seconds = time.perf_counter() - start
    noisy = with_noise(synthetic_dataset, TRAIN_SNR_DB, seed=TRAIN_SEED)
    return TrainedRun(load_checkpoint(ckpt), noisy, ckpt, seconds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
