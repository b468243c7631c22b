import numpy as np
import pytest
import torch

from brsda.config import build_config

# Small enough that a full train_run takes well under a second.
TINY = {
    "name": "tiny",
    "dataset": {
        "kind": "synthetic",
        "synthetic": {"classes": 3, "samples_per_class": 20, "image_side": 8,
                      "split_ratios": [0.5, 0.25, 0.25], "noise_sigma": 0.1},
    },
    "backbone": {"name": "cnn", "feature_dim": 8, "widths": [4]},
    "augmentation": {"lambda": 0.5, "U": 2},
    "schedule": {"total_epochs": 3, "warmup_epochs": 1, "batch_size": 8},
}


@pytest.fixture
def tiny_config():
    return build_config(TINY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _threads():
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
