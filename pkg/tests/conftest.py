import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from deepdr.generator import ModelConfig  # noqa: E402
from deepdr.synth.render import random_scene, render_sequence  # noqa: E402


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_cfg():
    """Smallest config that still exercises every layer (2x2 bottleneck)."""
    return ModelConfig(size=16, levels=3, width=4, coarse_width=4, spade_hidden=4, num_classes=8)


@pytest.fixture(scope="session")
def small_seqs():
    """Three rendered 64x64 sequences of five frames."""
    return [render_sequence(random_scene(np.random.default_rng(k), 5, 64, 8, seed=k)) for k in range(3)]


@pytest.fixture(scope="session")
def tiny_seqs():
    return [render_sequence(random_scene(np.random.default_rng(10 + k), 6, 16, 8, seed=10 + k)) for k in range(2)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
