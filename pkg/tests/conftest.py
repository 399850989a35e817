import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synres import maskops
from synres.core import BinaryMask, ImageStore, RasterMask


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile the jit kernels once so timed tests see steady-state speed
    maskops.warmup()


@pytest.fixture
def store(tmp_path):
    return ImageStore(tmp_path / "images")


def random_binary(rng, width, height, density=None):
    density = rng.uniform(0.1, 0.9) if density is None else density
    return BinaryMask(width, height, rng.random((height, width)) < density)


def random_raster(rng, width, height):
    return RasterMask(width, height, rng.random((height, width)))


def planted_instance(rng, n_max=6, m_max=4, size_max=16):
    """Random stage-2 instance with planted cluster structure.

    Returns (grid, values) where grid[i][j] is a RasterMask and values[i][j]
    the matching flat float list for the oracles. Some columns are pure
    noise, some share a rectangle archetype, and occasionally a column is
    empty everywhere.
    """
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(1, n_max + 1))
    archetypes = []
    for _ in range(int(rng.integers(1, 4))):
        w = h = int(rng.integers(6, size_max + 1))
        x0, y0 = int(rng.integers(w - 3)), int(rng.integers(h - 3))
        x1 = int(rng.integers(x0 + 1, w + 1))
        y1 = int(rng.integers(y0 + 1, h + 1))
        archetypes.append((x0, y0, x1, y1))
    dims = [(int(rng.integers(5, size_max + 1)), int(rng.integers(5, size_max + 1))) for _ in range(m)]
    assign = [int(rng.integers(-2, len(archetypes))) for _ in range(n)]  # -1 noise, -2 empty

    grid, values = [], []
    for i in range(m):
        w, h = dims[i]
        row_masks, row_values = [], []
        for j in range(n):
            kind = assign[j]
            if kind == -2:
                vals = np.full((h, w), 0.05)
            elif kind == -1:
                vals = rng.random((h, w))
            else:
                x0, y0, x1, y1 = archetypes[kind]
                vals = 0.05 + 0.1 * rng.random((h, w))
                vals[min(y0, h - 1) : min(y1, h), min(x0, w - 1) : min(x1, w)] = 0.9
            vals = np.round(np.clip(vals, 0.0, 1.0), 6)
            row_masks.append(RasterMask(w, h, vals))
            row_values.append([float(v) for v in vals.reshape(-1)])
        grid.append(tuple(row_masks))
        values.append(row_values)
    return grid, values


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_c" in nodeid and getattr(report, "when", "call") == "call":
                outcomes[nodeid.split("::")[-1]] = "PASS" if status == "passed" else "FAIL"
    if outcomes:
        terminalreporter.section("acceptance criteria")
        for name in sorted(outcomes):
            terminalreporter.write_line(f"{name}: {outcomes[name]}")
