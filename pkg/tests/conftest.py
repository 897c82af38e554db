import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ppglkit.grid import GridKind, VoxelGrid


def label_grid(arr, spacing=(1.0, 1.0, 1.0)):
    return VoxelGrid(np.asarray(arr), spacing, GridKind.LABEL)


def intensity_grid(arr, spacing=(1.0, 1.0, 1.0)):
    return VoxelGrid(np.asarray(arr, dtype=np.float32), spacing, GridKind.INTENSITY)


def random_mask(rng, max_side=20, labels=(0, 1), p_fg=0.4):
    dims = tuple(int(rng.integers(2, max_side + 1)) for _ in range(3))
    return (rng.random(dims) < p_fg).astype(np.uint8) * labels[1]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", []) if mod else []
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
