import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from radiomap.nn import (
    AdamState,
    GatLayerParams,
    GatModel,
    Tensor,
    adam_step,
    attention_weights,
    gat_layer_forward,
    load_checkpoint,
    save_checkpoint,
)
from radiomap.nn import autodiff as ad
from radiomap.trainer import masked_loss


def random_adjacency(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return sp.csr_matrix(upper | upper.T)


def dense_reference(layer: GatLayerParams, h: np.ndarray, adj: np.ndarray) -> np.ndarray:
    """Straight per-node loops over neighbours plus self."""
    W, a = layer.weight.data, layer.attention_vec.data
    o = W.shape[1]
    wh = h @ W
    out = np.zeros((h.shape[0], o))
    for i in range(h.shape[0]):
        nbrs = [j for j in range(h.shape[0]) if adj[i, j] or j == i]
        e = []
        for j in nbrs:
            z = a[:o] @ wh[i] + a[o:] @ wh[j]
            e.append(z if z > 0 else layer.leaky_slope * z)
        e = np.array(e)
        w = np.exp(e - e.max())
        w /= w.sum()
        for wj, j in zip(w, nbrs):
            out[i] += wj * wh[j]
    out += layer.bias.data
    if layer.activation == "elu":
        out = np.where(out > 0, out, np.expm1(np.minimum(out, 0)))
    return out


# -- forward -----------------------------------------------------------------


def test_isolated_node():
    rng = np.random.default_rng(0)
    layer = GatLayerParams.init(3, 4, rng, activation="identity")
    h = rng.standard_normal((1, 3))
    out = gat_layer_forward(layer, h, sp.csr_matrix((1, 1), dtype=bool))
    assert np.allclose(out.data, h @ layer.weight.data, atol=1e-15)
    _, _, alpha = attention_weights(layer, h, sp.csr_matrix((1, 1), dtype=bool))
    assert alpha.tolist() == [1.0]


def test_two_identical_nodes_half_attention():
    rng = np.random.default_rng(1)
    layer = GatLayerParams.init(3, 5, rng)
    h = np.tile(rng.standard_normal(3), (2, 1))
    _, _, alpha = attention_weights(layer, h, sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=bool)))
    assert np.all(alpha == 0.5)


@pytest.mark.parametrize("activation", ["elu", "identity"])
@pytest.mark.parametrize("seed", range(3))
def test_matches_dense_reference(activation, seed):
    rng = np.random.default_rng(seed)
    adj = random_adjacency(5, 0.5, rng)
    layer = GatLayerParams.init(4, 6, rng, activation=activation)
    layer.bias.data[:] = rng.standard_normal(6)
    h = rng.standard_normal((5, 4))
    out = gat_layer_forward(layer, h, adj).data
    assert np.allclose(out, dense_reference(layer, h, adj.toarray()), rtol=0, atol=1e-12)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        adj = random_adjacency(n, float(rng.uniform(0, 0.6)), rng)
        layer = GatLayerParams.init(3, 4, rng)
        dst, _, alpha = attention_weights(layer, rng.standard_normal((n, 3)) * 5, adj)
        sums = np.bincount(dst, weights=alpha, minlength=n)
        assert np.all(np.abs(sums - 1) < 1e-9)


def test_softmax_stable_for_large_scores():
    rng = np.random.default_rng(3)
    layer = GatLayerParams.init(2, 2, rng)
    out = gat_layer_forward(layer, rng.standard_normal((4, 2)) * 1e5, random_adjacency(4, 1.0, rng))
    assert np.all(np.isfinite(out.data))


def test_dimension_mismatch():
    rng = np.random.default_rng(4)
    layer = GatLayerParams.init(3, 2, rng)
    with pytest.raises(ValueError):
        gat_layer_forward(layer, np.zeros((4, 2)), sp.identity(4, format="csr"))
    with pytest.raises(ValueError):
        gat_layer_forward(layer, np.zeros((3, 3)), sp.identity(4, format="csr"))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    adj = random_adjacency(n, 0.4, rng)
    model = GatModel.init(3, hidden=4, seed=seed % 1000)
    x = rng.standard_normal((n, 3))
    perm = rng.permutation(n)
    p = sp.csr_matrix(np.eye(n)[perm])
    out = model.forward(x, adj).data
    out_perm = model.forward(x[perm], (p @ adj @ p.T).astype(bool)).data
    assert np.allclose(out_perm, out[perm], atol=1e-12)


def test_model_shapes_and_validation():
    m = GatModel.init(5, hidden=8, seed=0)
    assert [l.weight.shape for l in m.layers] == [(5, 8), (8, 8), (8, 1)]
    assert [l.activation for l in m.layers] == ["elu", "elu", "identity"]
    with pytest.raises(ValueError):
        GatModel([m.layers[1], m.layers[0], m.layers[2]])
    with pytest.raises(ValueError):
        GatLayerParams(Tensor(np.zeros((2, 3))), Tensor(np.zeros(5)))


def test_init_bounds_and_determinism():
    a, b = GatModel.init(5, seed=7), GatModel.init(5, seed=7)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weight.data, lb.weight.data)
        lim = np.sqrt(6 / sum(la.weight.shape))
        assert np.abs(la.weight.data).max() <= lim


# -- gradients ------------------------------------------------------------------


def loss_fn(model, x, adj1, adj2, y, mask):
    return masked_loss(ad.reshape(model.forward(x, adj1, adj2), (x.shape[0],)), y, mask)


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def finite_difference(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("n", [6, 10])
def test_full_model_gradient_check(n):
    rng = np.random.default_rng(n)
    model = GatModel.init(5, hidden=6, seed=n)
    x = Tensor(rng.standard_normal((n, 5)), requires_grad=True)
    adj1, adj2 = random_adjacency(n, 0.4, rng), random_adjacency(n, 0.4, rng)
    y = rng.standard_normal(n)
    mask = rng.random(n) < 0.6
    mask[0] = True
    model.zero_grad()
    loss_fn(model, x, adj1, adj2, y, mask).backward()
    f = lambda: float(loss_fn(model, x.data, adj1, adj2, y, mask).data)
    for p in model.parameters() + [x]:
        fd = finite_difference(f, p.data)
        assert rel_err(p.grad, fd).max() < 1e-4


def test_constant_output_zero_gradients():
    model = GatModel.init(3, hidden=4, seed=0)
    for l in model.layers:
        l.weight.data[:] = 0.0
    x = np.random.default_rng(0).standard_normal((4, 3))
    out = model.forward(x, random_adjacency(4, 0.5, np.random.default_rng(1)))
    ad.total(out).backward()
    for l in model.layers:
        assert np.all(l.attention_vec.grad == 0)
    # first layer weights feed constant-zero downstream weights
    assert np.all(model.layers[0].weight.grad == 0)


def test_gradient_linearity():
    rng = np.random.default_rng(5)
    model = GatModel.init(3, hidden=4, seed=2)
    x, adj = rng.standard_normal((6, 3)), random_adjacency(6, 0.5, rng)
    y, mask = rng.standard_normal(6), np.ones(6, bool)
    loss_fn(model, x, adj, adj, y, mask).backward()
    g1 = [p.grad.copy() for p in model.parameters()]
    model.zero_grad()
    (loss_fn(model, x, adj, adj, y, mask) * 2.0).backward()
    for a, b in zip(g1, model.parameters()):
        assert np.allclose(2 * a, b.grad, rtol=1e-12, atol=0)


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_edge_aggregate_matches_composed_ops():
    rng = np.random.default_rng(6)
    adj = random_adjacency(7, 0.5, rng) + sp.identity(7, format="csr", dtype=bool)
    adj = sp.csr_matrix(adj, dtype=bool)
    adj.sort_indices()
    src = adj.indices.astype(np.int64)
    dst = np.repeat(np.arange(7), np.diff(adj.indptr))
    alpha = Tensor(rng.random(len(src)), requires_grad=True)
    h = Tensor(rng.standard_normal((7, 3)), requires_grad=True)
    w = rng.standard_normal((7, 3))
    fused = ad.edge_aggregate(alpha, h, src, adj.indptr)
    ad.total(fused * w).backward()
    ga, gh = alpha.grad.copy(), h.grad.copy()
    alpha.zero_grad(), h.zero_grad()
    composed = ad.segment_sum(ad.scale_rows(alpha, ad.gather(h, ad.Segments(src, 7))), ad.Segments(dst, 7))
    ad.total(composed * w).backward()
    assert np.allclose(fused.data, composed.data, atol=1e-14)
    assert np.allclose(ga, alpha.grad, atol=1e-14)
    assert np.allclose(gh, h.grad, atol=1e-14)


# -- Adam -------------------------------------------------------------------------


def test_adam_zero_gradient_no_change():
    p = [np.array([1.0, -2.0])]
    adam_step(AdamState(), p, [np.zeros(2)])
    assert p[0].tolist() == [1.0, -2.0]


def test_adam_first_step_is_lr_sign():
    # m_hat = g and v_hat = g^2 on step one, so the update is lr * g / (|g| + eps)
    p = [np.array([0.0, 0.0, 0.0])]
    g = np.array([3.0, -0.5, 1e-3])
    adam_step(AdamState(lr=1e-3), p, [g])
    expected = -1e-3 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p[0], expected, rtol=0, atol=1e-15)
    assert np.allclose(np.abs(p[0]), 1e-3, rtol=1e-5)


def test_adam_quadratic_converges():
    x = [np.array([3.0])]
    state = AdamState(lr=0.01)
    for step in range(2000):
        adam_step(state, x, [2 * (x[0] - 1.5)])
        if abs(x[0][0] - 1.5) < 1e-6:
            break
    assert abs(x[0][0] - 1.5) < 1e-6
    assert state.step <= 2000


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])
    with pytest.raises(ValueError):
        AdamState(beta1=1.0)


def test_training_trajectory_deterministic():
    def trajectory():
        rng = np.random.default_rng(11)
        model = GatModel.init(3, hidden=4, seed=3)
        x, adj = rng.standard_normal((8, 3)), random_adjacency(8, 0.4, rng)
        y = rng.standard_normal(8)
        state = AdamState(lr=0.01)
        for _ in range(5):
            model.zero_grad()
            loss_fn(model, x, adj, adj, y, np.ones(8, bool)).backward()
            params = model.parameters()
            adam_step(state, [p.data for p in params], [p.grad for p in params])
        return np.concatenate([p.data.ravel() for p in model.parameters()])

    assert np.array_equal(trajectory(), trajectory())


# -- checkpoints ---------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = GatModel.init(5, hidden=7, seed=9)
    save_checkpoint(model, tmp_path / "m.ckpt", {"seed": 9, "epoch": 3})
    back, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta["seed"] == 9 and meta["epoch"] == 3
    for a, b in zip(model.layers, back.layers):
        assert np.array_equal(a.weight.data, b.weight.data)
        assert np.array_equal(a.attention_vec.data, b.attention_vec.data)
        assert a.activation == b.activation and a.leaky_slope == b.leaky_slope
    assert (tmp_path / "m.ckpt").read_bytes()[:7] == b"GATCKPT"


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"hello world")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")
