"""Per-block radio graphs: node extraction and the four edge-encoding rules."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from radiomap.propagation import DepthMap, DepthParams, RadiomapTensor
from radiomap.scenario import BlockIndex, UrbanScenario, _collinear, block_free_cells, los_fraction_many

ENCODINGS = ("adjacency", "environment", "transmitter", "model")


@dataclass(frozen=True)
class RadioNode:
    row: int
    col: int
    x_m: float
    y_m: float
    frequency_mhz: float
    observed_rss_dbm: float | None = None

    @property
    def observed(self) -> bool:
        return self.observed_rss_dbm is not None


@dataclass(frozen=True)
class EncodingStrategy:
    kind: str = "model"
    neighborhood: int = 4
    collinear_tol: float = 0.5
    depth: DepthParams = field(default_factory=DepthParams)
    # bound environment/transmitter edges by depth.d_th
    range_limit: bool = True
    # connect when a building IS between the nodes (the equations' literal reading)
    literal_environment: bool = False

    def __post_init__(self):
        if self.kind not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.kind!r}; choose from {ENCODINGS}")
        if self.neighborhood not in (4, 8):
            raise ValueError("neighborhood must be 4 or 8")
        if self.collinear_tol < 0:
            raise ValueError("collinear_tol must be non-negative")


@dataclass
class RadioGraph:
    nodes: list[RadioNode]
    adjacency: sp.csr_matrix
    block: BlockIndex
    frequency_mhz: float

    @property
    def cells(self) -> np.ndarray:
        return np.array([[n.row, n.col] for n in self.nodes], dtype=np.int64).reshape(-1, 2)


class GraphStats(NamedTuple):
    node_count: int
    edge_count: int
    isolated_count: int
    mean_degree: float


def extract_nodes(scenario: UrbanScenario, radiomap: RadiomapTensor, b: BlockIndex, f_mhz: float,
                  sample_mask: np.ndarray) -> list[RadioNode]:
    """One node per free grid of block ``b`` (row-major); observed where ``sample_mask``."""
    k = scenario.frequency_index(f_mhz)
    f = scenario.frequencies_mhz[k]
    cells = block_free_cells(scenario, b)
    mask = np.asarray(sample_mask, dtype=bool).reshape(scenario.rows, scenario.cols)
    vals = radiomap.values[:, radiomap.freq_index(f)].reshape(radiomap.rows, radiomap.cols)
    xs, ys = scenario.position_m(cells[:, 0], cells[:, 1])
    nodes = []
    for (r, c), x, y in zip(cells, xs, ys):
        obs = float(vals[r, c]) if mask[r, c] else None
        nodes.append(RadioNode(int(r), int(c), float(x), float(y), f, obs))
    return nodes


def _pairs_within(cells: np.ndarray, radius_cells: float) -> np.ndarray:
    if len(cells) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(cells.astype(float))
    pairs = tree.query_pairs(radius_cells + 1e-9, output_type="ndarray")
    return pairs.astype(np.int64).reshape(-1, 2)


def _all_pairs(n: int) -> np.ndarray:
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1).astype(np.int64)


def _within_dth(cells: np.ndarray, pairs: np.ndarray, d_th: float, grid: float) -> np.ndarray:
    d = cells[pairs[:, 0]] - cells[pairs[:, 1]]
    dist = np.hypot(d[:, 0], d[:, 1]) * grid
    return dist <= d_th


def _candidates(cells: np.ndarray, strategy: EncodingStrategy, grid: float, limited: bool) -> np.ndarray:
    if not limited:
        return _all_pairs(len(cells))
    pairs = _pairs_within(cells, strategy.depth.d_th / grid)
    return pairs[_within_dth(cells, pairs, strategy.depth.d_th, grid)]


def encode_pairs(cells: np.ndarray, scenario: UrbanScenario, strategy: EncodingStrategy,
                 depth_map: DepthMap | None = None) -> np.ndarray:
    """Undirected edge list ``(E, 2)`` with ``i < j`` over the given node cells."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    grid = scenario.grid_size_m
    kind = strategy.kind
    if kind == "model":
        if depth_map is None:
            raise ValueError("model-based encoding needs a depth map")
    elif depth_map is not None:
        raise ValueError(f"{kind} encoding takes no depth map")

    if kind == "adjacency":
        pairs = _pairs_within(cells, 1.5)
        d = np.abs(cells[pairs[:, 0]] - cells[pairs[:, 1]])
        if strategy.neighborhood == 4:
            keep = d.sum(axis=1) == 1
        else:
            keep = d.max(axis=1) == 1
        return pairs[keep]

    if kind == "model":
        pairs = _candidates(cells, strategy, grid, limited=True)
        depth = depth_map.values[cells[:, 0], cells[:, 1]]
        delta = strategy.depth.resolved_delta(len(scenario.transmitters))
        keep = np.abs(depth[pairs[:, 0]] - depth[pairs[:, 1]]) <= delta
        return pairs[keep]

    pairs = _candidates(cells, strategy, grid, limited=strategy.range_limit)
    if kind == "environment":
        free = los_fraction_many(scenario.occupancy, cells[pairs[:, 0]], cells[pairs[:, 1]])
        blocked = free < 1.0 - 1e-12
        keep = blocked if strategy.literal_environment else ~blocked
        return pairs[keep]

    # transmitter
    keep = np.zeros(len(pairs), dtype=bool)
    a = cells[pairs[:, 0]].astype(float)
    b = cells[pairs[:, 1]].astype(float)
    for tx in scenario.transmitters:
        t = np.array([tx.row, tx.col], dtype=float)
        keep |= _collinear(a - t, b - t, strategy.collinear_tol)
    return pairs[keep]


def pairs_to_adjacency(pairs: np.ndarray, n: int) -> sp.csr_matrix:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = sp.csr_matrix((np.ones(len(i), dtype=bool), (i, j)), shape=(n, n))
    adj.sum_duplicates()
    adj.setdiag(False)
    adj.eliminate_zeros()
    return adj


def encode_edges(nodes: list[RadioNode], scenario: UrbanScenario, strategy: EncodingStrategy,
                 depth_map: DepthMap | None = None) -> sp.csr_matrix:
    if depth_map is not None and nodes:
        if abs(depth_map.f_mhz - nodes[0].frequency_mhz) > 1e-9 * depth_map.f_mhz:
            raise ValueError(
                f"depth map is at {depth_map.f_mhz} MHz but nodes are at {nodes[0].frequency_mhz} MHz"
            )
    cells = np.array([[n.row, n.col] for n in nodes], dtype=np.int64).reshape(-1, 2)
    return pairs_to_adjacency(encode_pairs(cells, scenario, strategy, depth_map), len(nodes))


def build_graph(scenario: UrbanScenario, radiomap: RadiomapTensor, b: BlockIndex, f_mhz: float,
                sample_mask: np.ndarray, strategy: EncodingStrategy) -> RadioGraph:
    from radiomap.propagation import radio_depth_map

    nodes = extract_nodes(scenario, radiomap, b, f_mhz, sample_mask)
    f = scenario.frequencies_mhz[scenario.frequency_index(f_mhz)]
    depth = radio_depth_map(scenario, strategy.depth, f) if strategy.kind == "model" else None
    adj = encode_edges(nodes, scenario, strategy, depth)
    return RadioGraph(nodes, adj, b, float(f_mhz))


def graph_stats(graph_or_adj) -> GraphStats:
    adj = graph_or_adj.adjacency if isinstance(graph_or_adj, RadioGraph) else graph_or_adj
    n = adj.shape[0]
    if n == 0:
        return GraphStats(0, 0, 0, 0.0)
    deg = np.asarray((adj != 0).sum(axis=1)).ravel()
    edges = int(deg.sum()) // 2
    return GraphStats(n, edges, int((deg == 0).sum()), float(deg.sum()) / n)


def write_graph(graph: RadioGraph, edges_path, nodes_path) -> None:
    """Edge list ``i j`` (i < j) and a node table ``idx,row,col,x_m,y_m,observed_rss``."""
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(edges_path, "w") as fh:
        for i, j in zip(coo.row[order], coo.col[order]):
            fh.write(f"{i} {j}\n")
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["idx", "row", "col", "x_m", "y_m", "observed_rss"])
        for i, n in enumerate(graph.nodes):
            obs = "" if n.observed_rss_dbm is None else repr(n.observed_rss_dbm)
            w.writerow([i, n.row, n.col, f"{n.x_m:g}", f"{n.y_m:g}", obs])


def read_edges(path) -> np.ndarray:
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    return data.reshape(-1, 2)
