"""Block and area RMSE, pixmap rendering and value histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from radiomap.propagation import RadiomapTensor
from radiomap.scenario import BlockIndex, UrbanScenario, block_free_cells


@dataclass(frozen=True)
class BlockRmse:
    block: BlockIndex
    rmse_db: float
    node_count: int

    def __post_init__(self):
        if not self.rmse_db >= 0:
            raise ValueError("rmse_db must be non-negative")


@dataclass
class AreaReport:
    method: str
    sampling_rate: float
    blocks: list[BlockRmse]
    area_rmse_db: float
    per_frequency: dict[float, float] = field(default_factory=dict)


def rmse_block(pred, truth, block: BlockIndex = BlockIndex(0, 0)) -> BlockRmse:
    """Root mean squared error over one block's evaluated grids."""
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.size != t.size:
        raise ValueError(f"prediction has {p.size} values, truth has {t.size}")
    if p.size == 0:
        raise ValueError(f"block {block} has no grids to evaluate")
    return BlockRmse(block, float(np.sqrt(np.mean((p - t) ** 2))), int(p.size))


def rmse_area(block_rmses) -> float:
    """Square root of the mean of squared block RMSEs."""
    vals = [b.rmse_db if isinstance(b, BlockRmse) else float(b) for b in block_rmses]
    if not vals:
        raise ValueError("no blocks to aggregate")
    return math.sqrt(sum(v * v for v in vals) / len(vals))


def evaluate_blocks(scenario: UrbanScenario, truth: RadiomapTensor, pred: RadiomapTensor, blocks,
                    f_mhz: float) -> list[BlockRmse]:
    """Block RMSEs at ``f_mhz`` over every free grid of each block (observed grids included)."""
    t = truth.grid(f_mhz)
    p = pred.grid(f_mhz)
    out = []
    for b in blocks:
        c = block_free_cells(scenario, b)
        if len(c) == 0:
            continue
        out.append(rmse_block(p[c[:, 0], c[:, 1]], t[c[:, 0], c[:, 1]], b))
    return out


def area_report(scenario: UrbanScenario, truth: RadiomapTensor, pred: RadiomapTensor, blocks, f_targets,
                method: str, sampling_rate: float) -> AreaReport:
    per_f, all_blocks = {}, []
    for f in f_targets:
        rm = evaluate_blocks(scenario, truth, pred, blocks, f)
        per_f[float(f)] = rmse_area(rm)
        all_blocks.extend(rm)
    return AreaReport(method, sampling_rate, all_blocks, rmse_area(all_blocks), per_f)


# -- rendering -----------------------------------------------------------------

PALETTES = {
    "gray": [(0, 0, 0), (255, 255, 255)],
    "heat": [(0, 0, 128), (0, 160, 255), (120, 255, 120), (255, 200, 0), (200, 0, 0)],
}
BUILDING_RGB = (255, 0, 255)


def _colormap(t: np.ndarray, palette: str) -> np.ndarray:
    stops = np.asarray(PALETTES[palette], dtype=float)
    pos = np.clip(t, 0.0, 1.0) * (len(stops) - 1)
    i = np.minimum(pos.astype(int), len(stops) - 2)
    frac = (pos - i)[..., None]
    return np.rint(stops[i] * (1 - frac) + stops[i + 1] * frac).astype(np.uint8)


def render_radiomap(values, out_path, f_mhz: float | None = None, lo_db: float | None = None,
                    hi_db: float | None = None, palette: str = "heat") -> Path:
    """Write a binary PPM, one pixel per grid; NaN (building) cells get a fixed color.

    ``values`` is either a ``(rows, cols)`` dBm grid or a :class:`RadiomapTensor`
    together with ``f_mhz``. Bounds default to the finite min and max.
    """
    if isinstance(values, RadiomapTensor):
        if f_mhz is None:
            raise ValueError("f_mhz is required when rendering a tensor")
        grid = values.grid(f_mhz)
    else:
        grid = np.asarray(values, dtype=float)
    if grid.ndim != 2:
        raise ValueError("expected a 2-D grid")
    if palette not in PALETTES:
        raise ValueError(f"unknown palette {palette!r}; choose from {sorted(PALETTES)}")
    finite = np.isfinite(grid)
    if lo_db is None or hi_db is None:
        lo = float(grid[finite].min()) if finite.any() else 0.0
        hi = float(grid[finite].max()) if finite.any() else 1.0
        lo_db = lo if lo_db is None else lo_db
        hi_db = hi if hi_db is None else hi_db
    span = hi_db - lo_db if hi_db > lo_db else 1.0
    rgb = _colormap(np.where(finite, (grid - lo_db) / span, 0.0), palette)
    rgb[~finite] = BUILDING_RGB
    out = Path(out_path)
    rows, cols = grid.shape
    out.write_bytes(f"P6\n{cols} {rows}\n255\n".encode() + rgb.tobytes())
    return out


def read_ppm(path) -> np.ndarray:
    """Inverse of :func:`render_radiomap` for the files it writes."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    cols, rows = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols, 3)


# -- histogram -----------------------------------------------------------------


def histogram(values, bin_width_db: float, origin: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Counts over bins of width ``bin_width_db``; returns ``(edges, counts)``.

    Bins start at ``origin`` (default: the smallest value) and the last bin is
    closed on the right. NaNs are ignored.
    """
    if not bin_width_db > 0:
        raise ValueError("bin width must be positive")
    v = np.asarray(values, dtype=float).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    lo = float(v.min()) if origin is None else float(origin)
    if lo > v.min():
        raise ValueError("origin lies above the smallest value")
    n = max(1, math.ceil((v.max() - lo) / bin_width_db - 1e-9))
    edges = lo + bin_width_db * np.arange(n + 1)
    idx = np.minimum(((v - lo) / bin_width_db).astype(np.int64), n - 1)
    return edges, np.bincount(idx, minlength=n)
