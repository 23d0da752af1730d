"""Single-head graph attention layers and the three-layer radiomap network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from radiomap.nn import autodiff as ad
from radiomap.nn.autodiff import Segments, Tensor

ACTIVATIONS = ("elu", "identity")


class AttentionGraph:
    """Edge lists for attention over ``{neighbours} ∪ {self}``, grouped by target node.

    Edge ``e`` carries a message from ``src[e]`` into ``dst[e]``; edges are
    sorted by ``dst`` so per-node reductions are contiguous.
    """

    def __init__(self, adjacency):
        adj = sp.csr_matrix(adjacency, dtype=bool)
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise ValueError("adjacency must be square")
        full = (adj + sp.identity(n, dtype=bool, format="csr")).tocsr()
        full.sort_indices()
        self.n = n
        self.indptr = full.indptr.astype(np.int64)
        self.src = full.indices.astype(np.int64)
        self.dst = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr))
        self.by_src = Segments(self.src, n)
        self.by_dst = Segments(self.dst, n)

    @classmethod
    def ensure(cls, adjacency) -> "AttentionGraph":
        return adjacency if isinstance(adjacency, cls) else cls(adjacency)


@dataclass
class GatLayerParams:
    weight: Tensor
    attention_vec: Tensor
    leaky_slope: float = 0.2
    activation: str = "elu"
    # added after aggregation; zeros when omitted
    bias: Tensor | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        in_dim, out_dim = self.weight.shape
        if self.attention_vec.shape != (2 * out_dim,):
            raise ValueError(f"attention_vec must have shape {(2 * out_dim,)}")
        if self.bias is None:
            self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        elif self.bias.shape != (out_dim,):
            raise ValueError(f"bias must have shape {(out_dim,)}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.attention_vec, self.bias]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation: str = "elu",
             leaky_slope: float = 0.2) -> "GatLayerParams":
        lim_w = np.sqrt(6.0 / (in_dim + out_dim))
        lim_a = np.sqrt(6.0 / (2 * out_dim + 1))
        w = rng.uniform(-lim_w, lim_w, size=(in_dim, out_dim))
        a = rng.uniform(-lim_a, lim_a, size=2 * out_dim)
        return cls(Tensor(w, requires_grad=True), Tensor(a, requires_grad=True), leaky_slope, activation)


def _attention(params: GatLayerParams, h: Tensor, graph: AttentionGraph):
    out_dim = params.out_dim
    wh = h @ params.weight
    a_dst = ad.reshape(params.attention_vec, (2 * out_dim, 1))
    # a^T [W h_i || W h_j] split into a target half and a source half
    s_dst = ad.reshape(wh @ _slice_rows(a_dst, 0, out_dim), (graph.n,))
    s_src = ad.reshape(wh @ _slice_rows(a_dst, out_dim, 2 * out_dim), (graph.n,))
    scores = ad.leaky_relu(_gather1(s_dst, graph.by_dst) + _gather1(s_src, graph.by_src), params.leaky_slope)
    alpha = ad.segment_softmax(scores, graph.by_dst)
    return wh, alpha


def _slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    def backward(g):
        full = np.zeros(a.shape)
        full[lo:hi] = g
        return (full,)

    return Tensor(a.data[lo:hi], _parents=(a,), _backward=backward)


def _gather1(v: Tensor, seg: Segments) -> Tensor:
    return ad.reshape(ad.gather(ad.reshape(v, (seg.n, 1)), seg), (len(seg.idx),))


def gat_layer_forward(params: GatLayerParams, features, adjacency) -> Tensor:
    """``act(sum_j alpha_ij W h_j + b)`` over neighbours and self of each node."""
    h = ad.as_tensor(features)
    graph = AttentionGraph.ensure(adjacency)
    if h.shape != (graph.n, params.in_dim):
        raise ValueError(f"features have shape {h.shape}, expected {(graph.n, params.in_dim)}")
    wh, alpha = _attention(params, h, graph)
    out = ad.add_row(ad.edge_aggregate(alpha, wh, graph.src, graph.indptr), params.bias)
    return ad.elu(out) if params.activation == "elu" else out


def attention_weights(params: GatLayerParams, features, adjacency) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-edge attention as ``(dst, src, alpha)`` arrays, self-loops included."""
    graph = AttentionGraph.ensure(adjacency)
    _, alpha = _attention(params, ad.as_tensor(features), graph)
    return graph.dst.copy(), graph.src.copy(), alpha.data.copy()


@dataclass
class GatModel:
    layers: list[GatLayerParams]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("consecutive layer dimensions do not match")
        if self.layers[-1].out_dim != 1:
            raise ValueError("the output layer must produce one value per node")

    @classmethod
    def init(cls, in_dim: int, hidden: int = 32, seed: int = 0, n_layers: int = 3,
             leaky_slope: float = 0.2) -> "GatModel":
        rng = np.random.default_rng(seed)
        dims = [in_dim] + [hidden] * (n_layers - 1) + [1]
        layers = [
            GatLayerParams.init(dims[i], dims[i + 1], rng,
                                activation="identity" if i == n_layers - 1 else "elu",
                                leaky_slope=leaky_slope)
            for i in range(n_layers)
        ]
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, features, first_adjacency, rest_adjacency=None) -> Tensor:
        """Layer 1 runs on ``first_adjacency``; later layers on ``rest_adjacency``.

        Returns an ``(n, 1)`` tensor.
        """
        g1 = AttentionGraph.ensure(first_adjacency)
        g2 = g1 if rest_adjacency is None else AttentionGraph.ensure(rest_adjacency)
        h = ad.as_tensor(features)
        for i, layer in enumerate(self.layers):
            h = gat_layer_forward(layer, h, g1 if i == 0 else g2)
        return h

    def copy(self) -> "GatModel":
        return GatModel([
            GatLayerParams(Tensor(l.weight.data.copy(), requires_grad=True),
                           Tensor(l.attention_vec.data.copy(), requires_grad=True),
                           l.leaky_slope, l.activation, Tensor(l.bias.data.copy(), requires_grad=True))
            for l in self.layers
        ])
