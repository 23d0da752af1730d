import sys

import numpy as np
import pytest

from radiomap.scenario import TransmitterSpec, UrbanScenario


def supersample_los(occ: np.ndarray, p, q, n: int = 10_000) -> float:
    """Share of ``n`` evenly spaced points on the p->q center segment that land on free cells."""
    t = (np.arange(n) + 0.5) / n
    y = p[0] + 0.5 + t * (q[0] - p[0])
    x = p[1] + 0.5 + t * (q[1] - p[1])
    r = np.clip(np.floor(y).astype(int), 0, occ.shape[0] - 1)
    c = np.clip(np.floor(x).astype(int), 0, occ.shape[1] - 1)
    return float((~occ[r, c]).mean())


def make_scenario(occ, txs=((0, 0),), freqs=(1750.0,), grid=5.0, block=None, power=30.0):
    occ = np.asarray(occ, dtype=bool)
    rows, cols = occ.shape
    block = block or grid
    specs = tuple(TransmitterSpec(r, c, tuple(power for _ in freqs)) for r, c in txs)
    return UrbanScenario(cols * grid, rows * grid, grid, occ, specs, freqs, block)


@pytest.fixture
def free_scenario():
    return make_scenario(np.zeros((8, 8), dtype=bool), txs=((3, 3),), freqs=(1750.0, 5750.0), block=20.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
