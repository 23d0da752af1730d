"""Procedural urban maps for experiments where no map file is supplied."""

from __future__ import annotations

import numpy as np

from radiomap.scenario import TransmitterSpec, UrbanScenario

DEFAULT_FREQUENCIES_MHZ = (1750.0, 2750.0, 3750.0, 4750.0, 5750.0)


def random_buildings(rows: int, cols: int, density: float = 0.25, seed: int = 0,
                     min_size: int = 2, max_size: int = 8, street: int = 1) -> np.ndarray:
    """Scatter axis-aligned rectangular buildings until ``density`` is reached.

    Each rectangle keeps ``street`` free cells on every side from its
    neighbours' footprints, so the map has connected streets.
    """
    if not 0 <= density < 1:
        raise ValueError("density must be in [0, 1)")
    rng = np.random.default_rng(seed)
    occ = np.zeros((rows, cols), dtype=bool)
    target = density * rows * cols
    attempts = 0
    while occ.sum() < target and attempts < 50 * rows * cols:
        attempts += 1
        h = int(rng.integers(min_size, max_size + 1))
        w = int(rng.integers(min_size, max_size + 1))
        r = int(rng.integers(0, max(1, rows - h + 1)))
        c = int(rng.integers(0, max(1, cols - w + 1)))
        r0, r1 = max(0, r - street), min(rows, r + h + street)
        c0, c1 = max(0, c - street), min(cols, c + w + street)
        if occ[r0:r1, c0:c1].any():
            continue
        occ[r:r + h, c:c + w] = True
    return occ


def clear_around(occ: np.ndarray, row: int, col: int, radius: int = 1) -> None:
    occ[max(0, row - radius):row + radius + 1, max(0, col - radius):col + radius + 1] = False


def make_synthetic_scenario(width_m: float = 1000.0, height_m: float = 1000.0, grid_size_m: float = 5.0,
                            block_size_m: float = 200.0, frequencies_mhz=DEFAULT_FREQUENCIES_MHZ,
                            n_transmitters: int = 3, tx_power_dbm: float = 30.0,
                            building_density: float = 0.25, seed: int = 0,
                            name: str | None = None) -> UrbanScenario:
    """Build a scenario with the transmitter layout used by the published areas.

    Transmitters sit at roughly (1/4, 1/4), (1/4, 3/4) and (3/4, 1/2) of the
    area in (row, col) fractions; extra transmitters are placed uniformly at
    random on free cells.
    """
    rows, cols = int(round(height_m / grid_size_m)), int(round(width_m / grid_size_m))
    occ = random_buildings(rows, cols, density=building_density, seed=seed)
    layout = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.5)]
    rng = np.random.default_rng(seed + 7919)
    cells = []
    for i in range(n_transmitters):
        if i < len(layout):
            fr, fc = layout[i]
            r, c = int(fr * rows), int(fc * cols)
        else:
            r, c = int(rng.integers(0, rows)), int(rng.integers(0, cols))
        clear_around(occ, r, c)
        cells.append((r, c))
    powers = tuple(float(tx_power_dbm) for _ in frequencies_mhz)
    txs = tuple(TransmitterSpec(r, c, powers) for r, c in cells)
    return UrbanScenario(width_m, height_m, grid_size_m, occ, txs, tuple(frequencies_mhz), block_size_m,
                         name=name or f"synthetic-{seed}")
