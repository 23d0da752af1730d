"""Log-distance path loss, synthetic ground-truth radiomaps and radio depth maps."""

from __future__ import annotations

import csv
import struct
import weakref
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from radiomap.scenario import UrbanScenario, los_to_point


@dataclass(frozen=True)
class PropagationParams:
    const_loss_db: float = 20.0
    freq_fading: float = 20.0
    dist_fading: float = 2.0

    def __post_init__(self):
        if self.freq_fading < 0 or self.dist_fading < 0:
            raise ValueError("fading factors must be non-negative")


@dataclass(frozen=True)
class GeneratorParams:
    wall_loss_db_per_m: float = 0.1
    shadow_sigma_db: float = 2.0
    shadow_corr_m: float = 30.0
    seed: int = 0
    # correlation of the shadowing field between any two frequencies
    shadow_freq_corr: float = 0.8

    def __post_init__(self):
        if min(self.wall_loss_db_per_m, self.shadow_sigma_db, self.shadow_corr_m) < 0:
            raise ValueError("generator parameters must be non-negative")
        if not 0 <= self.shadow_freq_corr <= 1:
            raise ValueError("shadow_freq_corr must be in [0, 1]")


@dataclass(frozen=True)
class DepthParams:
    beta: float = 10.0
    c0: float = 0.0
    c: float = 0.0
    alpha: float = 0.0
    d_th: float = 15.0
    # None means one depth unit per transmitter
    delta: float | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.d_th <= 0:
            raise ValueError("d_th must be positive")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be non-negative")

    def resolved_delta(self, n_transmitters: int) -> float:
        return float(n_transmitters) if self.delta is None else float(self.delta)


@dataclass
class RadiomapTensor:
    """RSS in dBm per grid (row-major) and frequency; NaN marks building cells."""

    values: np.ndarray
    rows: int
    cols: int
    frequencies_mhz: tuple[float, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.rows * self.cols, -1)
        self.frequencies_mhz = tuple(float(f) for f in self.frequencies_mhz)
        if self.values.shape[1] != len(self.frequencies_mhz):
            raise ValueError("values has the wrong number of frequency columns")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values[:, 0]).reshape(self.rows, self.cols)

    def freq_index(self, f_mhz: float) -> int:
        for k, f in enumerate(self.frequencies_mhz):
            if abs(f - f_mhz) <= 1e-9 * max(1.0, f):
                return k
        raise KeyError(f"frequency {f_mhz} MHz not in radiomap")

    def grid(self, f_mhz: float) -> np.ndarray:
        return self.values[:, self.freq_index(f_mhz)].reshape(self.rows, self.cols)

    def copy(self) -> "RadiomapTensor":
        return RadiomapTensor(self.values.copy(), self.rows, self.cols, self.frequencies_mhz)


@dataclass
class DepthMap:
    values: np.ndarray  # (rows, cols), NaN at buildings
    f_mhz: float
    params: DepthParams = field(default_factory=DepthParams)


# -- closed forms ------------------------------------------------------------


def path_rss(tx_power_dbm, params: PropagationParams, f_mhz, d_m):
    """Average RSS from one transmitter: P - L_c - eta_f log10 f - 10 eta_d log10 d."""
    f = np.asarray(f_mhz, dtype=float)
    d = np.asarray(d_m, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = (np.asarray(tx_power_dbm, dtype=float) - params.const_loss_db
           - params.freq_fading * np.log10(f) - 10.0 * params.dist_fading * np.log10(d))
    return float(out) if out.ndim == 0 else out


def total_rss(per_transmitter):
    """Combine per-transmitter RSS by plain summation of the dBm values."""
    terms = list(per_transmitter)
    if not terms:
        raise ValueError("total_rss needs at least one transmitter term")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


# -- geometry caches -----------------------------------------------------------

_LOS_CACHE: "weakref.WeakKeyDictionary[UrbanScenario, np.ndarray]" = weakref.WeakKeyDictionary()


def transmitter_los(scenario: UrbanScenario) -> np.ndarray:
    """LOS fraction from every cell to every transmitter, shape ``(M, rows, cols)``."""
    cached = _LOS_CACHE.get(scenario)
    if cached is None:
        maps = [los_to_point(scenario, (t.row, t.col)) for t in scenario.transmitters]
        cached = np.stack(maps) if maps else np.zeros((0, scenario.rows, scenario.cols))
        cached.setflags(write=False)
        _LOS_CACHE[scenario] = cached
    return cached


def transmitter_distance_m(scenario: UrbanScenario) -> np.ndarray:
    """Center-to-transmitter distance in meters, floored at half a grid; ``(M, rows, cols)``."""
    rr, cc = np.indices((scenario.rows, scenario.cols))
    out = np.empty((len(scenario.transmitters), scenario.rows, scenario.cols))
    for m, t in enumerate(scenario.transmitters):
        out[m] = np.hypot(rr - t.row, cc - t.col) * scenario.grid_size_m
    return np.maximum(out, 0.5 * scenario.grid_size_m)


# -- shadowing ---------------------------------------------------------------


def gaussian_field(rows: int, cols: int, spacing_m: float, corr_m: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian field with covariance exp(-h / corr_m).

    Uses circulant embedding on a doubled torus; negative eigenvalues from the
    embedding are clipped to zero.
    """
    if corr_m <= 0:
        return rng.standard_normal((rows, cols))
    R, C = 2 * rows, 2 * cols
    dr = np.minimum(np.arange(R), R - np.arange(R)) * spacing_m
    dc = np.minimum(np.arange(C), C - np.arange(C)) * spacing_m
    h = np.hypot(dr[:, None], dc[None, :])
    lam = np.fft.fft2(np.exp(-h / corr_m)).real
    lam = np.clip(lam, 0.0, None)
    w = rng.standard_normal((R, C))
    z = np.fft.ifft2(np.sqrt(lam) * np.fft.fft2(w)).real
    return z[:rows, :cols]


def shadowing_fields(scenario: UrbanScenario, gen: GeneratorParams) -> np.ndarray:
    """Per-frequency shadowing in dB, ``(K, rows, cols)``, deterministic under ``gen.seed``."""
    K = len(scenario.frequencies_mhz)
    shape = (K, scenario.rows, scenario.cols)
    if gen.shadow_sigma_db == 0:
        return np.zeros(shape)
    common = gaussian_field(scenario.rows, scenario.cols, scenario.grid_size_m, gen.shadow_corr_m,
                            np.random.default_rng([gen.seed, 0]))
    out = np.empty(shape)
    a, b = np.sqrt(gen.shadow_freq_corr), np.sqrt(1.0 - gen.shadow_freq_corr)
    for k in range(K):
        own = gaussian_field(scenario.rows, scenario.cols, scenario.grid_size_m, gen.shadow_corr_m,
                             np.random.default_rng([gen.seed, k + 1]))
        out[k] = gen.shadow_sigma_db * (a * common + b * own)
    return out


# -- generator -----------------------------------------------------------------


def generate_ground_truth(scenario: UrbanScenario, prop: PropagationParams | None = None,
                          gen: GeneratorParams | None = None) -> RadiomapTensor:
    """Synthetic occlusion-aware radiomap standing in for ray-traced data.

    Per transmitter: the log-distance RSS minus ``wall_loss_db_per_m`` for
    every meter of the direct path inside buildings. Terms are summed per
    grid, then one correlated shadowing field per frequency is added.
    """
    prop = prop or PropagationParams()
    gen = gen or GeneratorParams()
    los = transmitter_los(scenario)
    dist = transmitter_distance_m(scenario)
    through_walls = (1.0 - los) * dist
    shadow = shadowing_fields(scenario, gen)
    K = len(scenario.frequencies_mhz)
    values = np.empty((scenario.rows, scenario.cols, K))
    for k, f in enumerate(scenario.frequencies_mhz):
        terms = []
        for m, tx in enumerate(scenario.transmitters):
            rss = path_rss(tx.tx_power_dbm[k], prop, f, dist[m])
            terms.append(rss - gen.wall_loss_db_per_m * through_walls[m])
        values[:, :, k] = total_rss(terms) + shadow[k]
    values[scenario.occupancy] = np.nan
    return RadiomapTensor(values.reshape(-1, K), scenario.rows, scenario.cols, scenario.frequencies_mhz)


# -- radio depth ---------------------------------------------------------------


def radio_depth_map(scenario: UrbanScenario, depth: DepthParams, f_mhz: float) -> DepthMap:
    """Summed alternative depth ``beta * T * log10(f)`` over all transmitters."""
    if f_mhz <= 0:
        raise ValueError("frequency must be positive")
    los = transmitter_los(scenario)
    values = depth.beta * los.sum(axis=0) * np.log10(f_mhz)
    values = np.where(scenario.occupancy, np.nan, values)
    return DepthMap(values, float(f_mhz), depth)


def radio_depth_exact(scenario: UrbanScenario, depth: DepthParams, f_mhz: float, m: int) -> DepthMap:
    """Single-transmitter depth ``T * (C - alpha log10 d - beta log10 f)``."""
    if f_mhz <= 0:
        raise ValueError("frequency must be positive")
    los = transmitter_los(scenario)[m]
    d = transmitter_distance_m(scenario)[m]
    values = los * (depth.c - depth.alpha * np.log10(d) - depth.beta * np.log10(f_mhz))
    values = np.where(scenario.occupancy, np.nan, values)
    return DepthMap(values, float(f_mhz), depth)


# -- files ---------------------------------------------------------------------

_MAGIC = b"RMAPT01\n"


def save_radiomap_csv(tensor: RadiomapTensor, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "f_mhz", "rss_dbm"])
        grid = tensor.values.reshape(tensor.rows, tensor.cols, -1)
        for r in range(tensor.rows):
            for c in range(tensor.cols):
                if not np.isfinite(grid[r, c, 0]):
                    continue
                for k, f in enumerate(tensor.frequencies_mhz):
                    w.writerow([r, c, f"{f:g}", repr(float(grid[r, c, k]))])


def load_radiomap_csv(path, rows: int | None = None, cols: int | None = None) -> RadiomapTensor:
    """Read a CSV radiomap. Grid size defaults to the largest index seen plus one."""
    recs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["row", "col", "f_mhz", "rss_dbm"]:
            raise ValueError(f"{path}: expected header row,col,f_mhz,rss_dbm")
        for rec in reader:
            recs.append((int(rec["row"]), int(rec["col"]), float(rec["f_mhz"]), float(rec["rss_dbm"])))
    if not recs:
        raise ValueError(f"{path}: no data rows")
    freqs = tuple(sorted({f for _, _, f, _ in recs}))
    rows = rows if rows is not None else max(r for r, *_ in recs) + 1
    cols = cols if cols is not None else max(c for _, c, *_ in recs) + 1
    kidx = {f: k for k, f in enumerate(freqs)}
    values = np.full((rows * cols, len(freqs)), np.nan)
    for r, c, f, v in recs:
        values[r * cols + c, kidx[f]] = v
    return RadiomapTensor(values, rows, cols, freqs)


def save_radiomap_binary(tensor: RadiomapTensor, path) -> None:
    K = len(tensor.frequencies_mhz)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", tensor.rows, tensor.cols, K))
        fh.write(np.asarray(tensor.frequencies_mhz, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def load_radiomap_binary(path) -> RadiomapTensor:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a binary radiomap")
    off = len(_MAGIC)
    rows, cols, K = struct.unpack_from("<III", data, off)
    off += 12
    freqs = np.frombuffer(data, dtype="<f8", count=K, offset=off)
    off += 8 * K
    values = np.frombuffer(data, dtype="<f8", count=rows * cols * K, offset=off)
    return RadiomapTensor(values.reshape(rows * cols, K).copy(), rows, cols, tuple(freqs))


def save_radiomap(tensor: RadiomapTensor, path) -> None:
    if str(path).endswith(".csv"):
        save_radiomap_csv(tensor, path)
    else:
        save_radiomap_binary(tensor, path)


def load_radiomap(path, rows: int | None = None, cols: int | None = None) -> RadiomapTensor:
    if str(path).endswith(".csv"):
        return load_radiomap_csv(path, rows, cols)
    return load_radiomap_binary(path)
