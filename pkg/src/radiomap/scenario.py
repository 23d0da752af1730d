"""Urban grid geometry: scenarios, blocks, and line-of-sight through buildings.

Grid indices are ``(row, col)`` with the origin at the northwest corner; rows
grow southward and columns eastward. Geometry is measured in grid units with
the center of cell ``(r, c)`` at ``(r + 0.5, c + 0.5)``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class TransmitterSpec:
    row: int
    col: int
    tx_power_dbm: tuple[float, ...]


@dataclass(frozen=True, order=True)
class BlockIndex:
    block_row: int
    block_col: int


@dataclass(frozen=True, eq=False)
class UrbanScenario:
    width_m: float
    height_m: float
    grid_size_m: float
    occupancy: np.ndarray
    transmitters: tuple[TransmitterSpec, ...]
    frequencies_mhz: tuple[float, ...]
    block_size_m: float
    name: str = field(default="scenario")

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        object.__setattr__(self, "frequencies_mhz", tuple(float(f) for f in self.frequencies_mhz))
        self.validate()

    # -- invariants -------------------------------------------------------

    def validate(self) -> None:
        for name in ("width_m", "height_m", "grid_size_m", "block_size_m"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        for name in ("width_m", "height_m"):
            value = getattr(self, name)
            if not _is_multiple(value, self.grid_size_m):
                raise ScenarioError(f"{name}={value} is not a multiple of grid_size_m={self.grid_size_m}")
            if not _is_multiple(value, self.block_size_m):
                raise ScenarioError(f"{name}={value} is not a multiple of block_size_m={self.block_size_m}")
        if not _is_multiple(self.block_size_m, self.grid_size_m):
            raise ScenarioError("block_size_m is not a multiple of grid_size_m")
        if self.occupancy.shape != (self.rows, self.cols):
            raise ScenarioError(
                f"occupancy has shape {self.occupancy.shape}, expected {(self.rows, self.cols)}"
            )
        freqs = self.frequencies_mhz
        if not freqs:
            raise ScenarioError("frequencies_mhz is empty")
        if any(f <= 0 for f in freqs):
            raise ScenarioError("frequencies_mhz must be positive")
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ScenarioError("frequencies_mhz must be strictly increasing")
        for i, tx in enumerate(self.transmitters):
            if not (0 <= tx.row < self.rows and 0 <= tx.col < self.cols):
                raise ScenarioError(f"transmitter {i} at ({tx.row}, {tx.col}) is outside the grid")
            if self.occupancy[tx.row, tx.col]:
                raise ScenarioError(f"transmitter {i} at ({tx.row}, {tx.col}) is on a building cell")
            if len(tx.tx_power_dbm) != len(freqs):
                raise ScenarioError(
                    f"transmitter {i} lists {len(tx.tx_power_dbm)} powers for {len(freqs)} frequencies"
                )

    # -- derived sizes ----------------------------------------------------

    @property
    def rows(self) -> int:
        return int(round(self.height_m / self.grid_size_m))

    @property
    def cols(self) -> int:
        return int(round(self.width_m / self.grid_size_m))

    @property
    def grid_count(self) -> int:
        return self.rows * self.cols

    @property
    def cells_per_block(self) -> int:
        return int(round(self.block_size_m / self.grid_size_m))

    @property
    def block_shape(self) -> tuple[int, int]:
        return self.rows // self.cells_per_block, self.cols // self.cells_per_block

    def blocks(self) -> list[BlockIndex]:
        nbr, nbc = self.block_shape
        return [BlockIndex(i, j) for i in range(nbr) for j in range(nbc)]

    def frequency_index(self, f_mhz: float) -> int:
        for k, f in enumerate(self.frequencies_mhz):
            if abs(f - f_mhz) <= 1e-9 * max(1.0, abs(f)):
                return k
        raise ScenarioError(f"frequency {f_mhz} MHz is not in the scenario")

    def tx_cells(self) -> np.ndarray:
        return np.array([[t.row, t.col] for t in self.transmitters], dtype=np.int64).reshape(-1, 2)

    def position_m(self, rows, cols) -> tuple[np.ndarray, np.ndarray]:
        """Global (x, y) of grid centers in meters; x eastward, y southward."""
        x = (np.asarray(cols, dtype=float) + 0.5) * self.grid_size_m
        y = (np.asarray(rows, dtype=float) + 0.5) * self.grid_size_m
        return x, y

    def with_frequencies(self, freqs) -> "UrbanScenario":
        return UrbanScenario(
            self.width_m, self.height_m, self.grid_size_m, self.occupancy,
            self.transmitters, freqs, self.block_size_m, self.name,
        )


def _is_multiple(value: float, unit: float) -> bool:
    q = value / unit
    return abs(q - round(q)) < 1e-9


def _check_cell(scenario: UrbanScenario, p) -> tuple[int, int]:
    r, c = int(p[0]), int(p[1])
    if not (0 <= r < scenario.rows and 0 <= c < scenario.cols):
        raise IndexError(f"grid index {(r, c)} is outside {scenario.rows}x{scenario.cols}")
    return r, c


# -- line of sight -----------------------------------------------------------


@njit(cache=True)
def _free_fraction(occ, r0, c0, r1, c1):
    # Exact chord lengths: split the center-to-center segment at every
    # crossing of an integer grid line and classify each piece by its midpoint.
    if r0 > r1 or (r0 == r1 and c0 > c1):
        r0, c0, r1, c1 = r1, c1, r0, c0
    if r0 == r1 and c0 == c1:
        return 0.0 if occ[r0, c0] else 1.0
    y0 = r0 + 0.5
    x0 = c0 + 0.5
    dy = float(r1 - r0)
    dx = float(c1 - c0)
    nr = abs(r1 - r0)
    nc = abs(c1 - c0)
    ts = np.empty(nr + nc + 2)
    ts[0] = 0.0
    n = 1
    # crossings of horizontal lines y = k, k in (y0, y1)
    step = 1 if r1 > r0 else -1
    for i in range(nr):
        k = r0 + (i + 1 if step > 0 else -i)
        ts[n] = (k - y0) / dy
        n += 1
    step = 1 if c1 > c0 else -1
    for i in range(nc):
        k = c0 + (i + 1 if step > 0 else -i)
        ts[n] = (k - x0) / dx
        n += 1
    ts[n] = 1.0
    n += 1
    ts = np.sort(ts[:n])
    free = 0.0
    for i in range(n - 1):
        dt = ts[i + 1] - ts[i]
        if dt <= 0.0:
            continue
        tm = 0.5 * (ts[i] + ts[i + 1])
        r = int(np.floor(y0 + tm * dy))
        c = int(np.floor(x0 + tm * dx))
        if not occ[r, c]:
            free += dt
    if free > 1.0:
        free = 1.0
    return free


@njit(cache=True)
def _free_fraction_batch(occ, p, q):
    out = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        out[i] = _free_fraction(occ, p[i, 0], p[i, 1], q[i, 0], q[i, 1])
    return out


def los_fraction(scenario: UrbanScenario, p, q) -> float:
    """Fraction of the center-to-center segment ``p -> q`` lying outside buildings.

    A zero-length segment (``p == q``) is 1.0 on a free cell and 0.0 on a
    building cell.
    """
    r0, c0 = _check_cell(scenario, p)
    r1, c1 = _check_cell(scenario, q)
    return float(_free_fraction(scenario.occupancy, r0, c0, r1, c1))


def los_fraction_many(occupancy: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Vectorised :func:`los_fraction` over index arrays of shape ``(n, 2)``.

    No bounds checking; callers pass indices they generated themselves.
    """
    p = np.ascontiguousarray(p, dtype=np.int64).reshape(-1, 2)
    q = np.ascontiguousarray(q, dtype=np.int64).reshape(-1, 2)
    return _free_fraction_batch(np.asarray(occupancy, dtype=np.bool_), p, q)


def los_to_point(scenario: UrbanScenario, target) -> np.ndarray:
    """LOS fraction from every grid cell to ``target``, shape ``(rows, cols)``."""
    r, c = _check_cell(scenario, target)
    rr, cc = np.indices((scenario.rows, scenario.cols))
    p = np.stack([rr.ravel(), cc.ravel()], axis=1)
    q = np.broadcast_to(np.array([r, c]), p.shape)
    return los_fraction_many(scenario.occupancy, p, q).reshape(scenario.rows, scenario.cols)


def obstruction_exists(scenario: UrbanScenario, p, q) -> bool:
    return los_fraction(scenario, p, q) < 1.0 - 1e-12


def collinear_with_transmitter(scenario: UrbanScenario, p, q, m: int, tol: float = 0.5) -> bool:
    """True when ``p`` and ``q`` sit on one ray out of transmitter ``m``.

    The perpendicular distance (grid units) from the farther point to the line
    through the transmitter and the nearer point must be at most ``tol``.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    p = np.array(_check_cell(scenario, p), dtype=float)
    q = np.array(_check_cell(scenario, q), dtype=float)
    tx = scenario.transmitters[m]
    t = np.array([tx.row, tx.col], dtype=float)
    return bool(_collinear(p - t, q - t, tol))


def _collinear(u: np.ndarray, v: np.ndarray, tol: float):
    """Vectorised collinearity test on offsets from the transmitter (last axis = 2)."""
    nu = np.hypot(u[..., 0], u[..., 1])
    nv = np.hypot(v[..., 0], v[..., 1])
    cross = np.abs(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])
    dot = u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]
    near = np.maximum(np.minimum(nu, nv), 1e-300)
    dist = cross / near
    # a point on the transmitter itself lies on every ray
    on_tx = (nu == 0) | (nv == 0)
    return on_tx | ((dot > 0) & (dist <= tol))


# -- blocks --------------------------------------------------------------------


def block_grids(scenario: UrbanScenario, b: BlockIndex) -> list[tuple[int, int]]:
    nbr, nbc = scenario.block_shape
    if not (0 <= b.block_row < nbr and 0 <= b.block_col < nbc):
        raise IndexError(f"block {b} outside the {nbr}x{nbc} partition")
    s = scenario.cells_per_block
    r0, c0 = b.block_row * s, b.block_col * s
    return [(r, c) for r in range(r0, r0 + s) for c in range(c0, c0 + s)]


def block_slices(scenario: UrbanScenario, b: BlockIndex) -> tuple[slice, slice]:
    block_grids(scenario, b)[:0]  # bounds check
    s = scenario.cells_per_block
    return slice(b.block_row * s, (b.block_row + 1) * s), slice(b.block_col * s, (b.block_col + 1) * s)


def block_free_cells(scenario: UrbanScenario, b: BlockIndex) -> np.ndarray:
    """Row-major ``(n, 2)`` array of the block's non-building grid indices."""
    g = np.array(block_grids(scenario, b), dtype=np.int64)
    keep = ~scenario.occupancy[g[:, 0], g[:, 1]]
    return g[keep]


# -- files -------------------------------------------------------------------


def parse_map(text: str) -> np.ndarray:
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ScenarioError("map is empty")
    width = len(lines[0])
    rows = []
    for i, ln in enumerate(lines, start=1):
        if len(ln) != width:
            raise ScenarioError(f"map line {i}: expected {width} cells, got {len(ln)}")
        bad = set(ln) - {".", "#"}
        if bad:
            raise ScenarioError(f"map line {i}: unexpected characters {sorted(bad)}")
        rows.append([ch == "#" for ch in ln])
    return np.array(rows, dtype=bool)


def format_map(occupancy: np.ndarray) -> str:
    return "\n".join("".join("#" if v else "." for v in row) for row in occupancy) + "\n"


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def read_config(path) -> configparser.ConfigParser:
    """Read a key-value config file, turning parse errors into ScenarioError with a line number."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: missing section header") from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ScenarioError(f"{path}:{lineno}: cannot parse line") from exc
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", "?")
        raise ScenarioError(f"{path}:{lineno}: {exc.message}") from exc
    return cp


def scenario_from_config(cp: configparser.ConfigParser, base_dir: Path, name: str = "scenario") -> UrbanScenario:
    def need(section, key):
        try:
            return cp[section][key]
        except KeyError:
            raise ScenarioError(f"missing [{section}] {key}") from None

    try:
        width = float(need("area", "width_m"))
        height = float(need("area", "height_m"))
        grid = float(need("area", "grid_size_m"))
        block = float(need("area", "block_size_m"))
        freqs = _floats(need("frequencies", "mhz"))
    except ValueError as exc:
        raise ScenarioError(f"bad numeric value: {exc}") from None

    rows, cols = int(round(height / grid)), int(round(width / grid))
    if "map" in cp and "file" in cp["map"]:
        map_path = base_dir / cp["map"]["file"]
        if not map_path.exists():
            raise ScenarioError(f"map file {map_path} not found")
        occupancy = parse_map(map_path.read_text())
    elif "map" in cp and "procedural" in cp["map"]:
        from radiomap.synthetic import random_buildings

        sec = cp["map"]
        occupancy = random_buildings(
            rows, cols,
            density=sec.getfloat("density", 0.25),
            seed=sec.getint("procedural"),
            min_size=sec.getint("min_size", 2),
            max_size=sec.getint("max_size", 8),
        )
    else:
        occupancy = np.zeros((rows, cols), dtype=bool)

    txs = []
    if "transmitters" in cp:
        for key, value in cp["transmitters"].items():
            head, _, tail = value.partition(":")
            try:
                rc = [int(v) for v in head.replace(",", " ").split()]
                powers = _floats(tail) if tail.strip() else [30.0]
            except ValueError:
                raise ScenarioError(f"transmitter {key}: cannot parse {value!r}") from None
            if len(rc) != 2:
                raise ScenarioError(f"transmitter {key}: expected 'row col : powers'")
            if len(powers) == 1:
                powers = powers * len(freqs)
            txs.append(TransmitterSpec(rc[0], rc[1], tuple(powers)))

    try:
        return UrbanScenario(width, height, grid, occupancy, tuple(txs), tuple(freqs), block, name=name)
    except ScenarioError as exc:
        # name the offending transmitter by its config key
        msg = str(exc)
        if msg.startswith("transmitter "):
            idx = int(msg.split()[1])
            key = list(cp["transmitters"].keys())[idx]
            raise ScenarioError(f"transmitter '{key}'{msg[len('transmitter ') + len(str(idx)):]}") from None
        raise


def load_scenario(path) -> UrbanScenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file {path} not found")
    cp = read_config(path)
    return scenario_from_config(cp, path.parent, name=path.stem)


def save_scenario(scenario: UrbanScenario, path, map_name: str | None = None) -> None:
    """Write ``scenario`` as a key-value file plus a sibling character map."""
    path = Path(path)
    map_name = map_name or path.stem + ".map"
    (path.parent / map_name).write_text(format_map(scenario.occupancy))
    lines = [
        "[area]",
        f"width_m = {scenario.width_m:g}",
        f"height_m = {scenario.height_m:g}",
        f"grid_size_m = {scenario.grid_size_m:g}",
        f"block_size_m = {scenario.block_size_m:g}",
        "",
        "[frequencies]",
        "mhz = " + ", ".join(f"{f:g}" for f in scenario.frequencies_mhz),
        "",
        "[transmitters]",
    ]
    for i, tx in enumerate(scenario.transmitters, start=1):
        lines.append(f"tx{i} = {tx.row} {tx.col} : " + ", ".join(f"{p:g}" for p in tx.tx_power_dbm))
    lines += ["", "[map]", f"file = {map_name}", ""]
    path.write_text("\n".join(lines))
