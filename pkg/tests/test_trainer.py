import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from radiomap.graph import EncodingStrategy
from radiomap.nn import GatModel, Tensor
from radiomap.propagation import generate_ground_truth
from radiomap.scenario import BlockIndex, ScenarioError, block_free_cells
from radiomap.synthetic import make_synthetic_scenario
from radiomap.trainer import (
    GraphCache,
    NormBounds,
    TrainingConfig,
    assemble_features,
    compute_bounds,
    count_for_rate,
    label_mask,
    load_run,
    masked_loss,
    multiband_splice,
    observed_grid,
    predict,
    sample_mask,
    save_run,
    split_blocks,
    train,
)


@pytest.fixture(scope="module")
def small():
    s = make_synthetic_scenario(200, 200, block_size_m=50, seed=1)
    return s, generate_ground_truth(s), split_blocks(s, 0.5, seed=0)


def bounds_for(s):
    return NormBounds(-100, -20, -120, -30, 2.5, s.width_m - 2.5, 2.5, s.height_m - 2.5,
                      min(s.frequencies_mhz), max(s.frequencies_mhz))


# -- masked loss ---------------------------------------------------------------------


def test_masked_loss_examples():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert float(masked_loss(y, y, np.ones(4, bool)).data) == 0.0
    assert float(masked_loss(y + 5, y, np.zeros(4, bool)).data) == 0.0
    pred = y.copy()
    pred[2] += 0.7
    assert float(masked_loss(pred, y, np.array([0, 0, 1, 0], bool)).data) == pytest.approx(0.49 / 4, abs=1e-15)


def test_masked_loss_length_mismatch():
    with pytest.raises(ValueError):
        masked_loss(np.zeros(3), np.zeros(4), np.ones(4, bool))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_masked_loss_gradient_isolation(n, seed):
    rng = np.random.default_rng(seed)
    pred = Tensor(rng.standard_normal(n), requires_grad=True)
    truth = rng.standard_normal(n)
    mask = rng.random(n) < 0.5
    loss = masked_loss(pred, truth, mask)
    loss.backward()
    assert np.all(pred.grad[~mask] == 0.0)
    expected = np.where(mask, 2 * (pred.data - truth) / n, 0.0)
    assert np.allclose(pred.grad, expected, atol=1e-14)
    assert float(loss.data) == pytest.approx(np.sum(mask * (pred.data - truth) ** 2) / n, abs=1e-12)


# -- features -----------------------------------------------------------------------


def test_features_unobserved_block(small):
    s, _, _ = small
    cells = block_free_cells(s, BlockIndex(0, 0))
    X = assemble_features(s, cells, np.full(len(cells), np.nan), 1750, 5750, bounds_for(s))
    assert np.all(X[:, 0] == 0)
    assert np.all(X[:, 4] == 1.0)
    assert np.all(X[:, 3] == 0.0)
    assert np.all((X >= 0) & (X <= 1))


def test_features_corners():
    s = make_scenario(np.zeros((4, 4), dtype=bool), block=10.0, freqs=(1750.0, 5750.0))
    cells = np.array([[0, 0], [3, 3]])
    X = assemble_features(s, cells, np.array([-60.0, np.nan]), 1750, 5750, bounds_for(s))
    assert X[0, 1] == 0 and X[0, 2] == 0
    assert X[1, 1] == 1 and X[1, 2] == 1
    assert X[0, 0] == pytest.approx(0.5)


def test_bounds_padding_keeps_observations_positive():
    s = make_scenario(np.zeros((4, 4), dtype=bool), block=10.0, freqs=(1750.0, 5750.0))
    b = compute_bounds(s, np.array([-80.0, -60.0]), np.array([-90.0, -70.0]), pad=0.1)
    assert (b.rss_lo, b.rss_hi) == (-82.0, -58.0)
    assert b.norm_rss(-80.0) > 0
    assert (b.target_lo, b.target_hi) == (-90.0, -70.0)


def test_degenerate_bounds():
    with pytest.raises(ValueError, match="rss"):
        NormBounds(1, 1, 0, 1, 0, 1, 0, 1, 0, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-120, -30))
def test_target_normalization_round_trip(v):
    s = make_scenario(np.zeros((4, 4), dtype=bool), block=10.0, freqs=(1750.0, 5750.0))
    b = bounds_for(s)
    assert abs(b.denorm_target(b.norm_target(v)) - v) < 1e-9


# -- sampling -------------------------------------------------------------------------


def test_count_for_rate():
    assert count_for_rate(0.05, 1600) == 80
    assert count_for_rate(0.05, 10) == 1
    assert count_for_rate(0.4, 5) == 2
    assert count_for_rate(1.0, 7) == 7


def test_nested_sampling(small):
    s, _, _ = small
    masks = [sample_mask(s, r, 1750.0, seed=3) for r in (0.05, 0.1, 0.2, 0.4)]
    for lo, hi in zip(masks, masks[1:]):
        assert np.all(hi[lo])
    for b in s.blocks():
        c = block_free_cells(s, b)
        assert masks[0][c[:, 0], c[:, 1]].sum() == count_for_rate(0.05, len(c))
    assert not masks[0][s.occupancy].any()


def test_semi_supervised_label_count(small):
    s, _, split = small
    m = label_mask(s, 0.05, 5750.0, seed=0, blocks=split.b1)
    for b in split.b1:
        c = block_free_cells(s, b)
        assert m[c[:, 0], c[:, 1]].sum() == math.ceil(0.05 * len(c))
    for b in split.b2:
        c = block_free_cells(s, b)
        assert not m[c[:, 0], c[:, 1]].any()
    assert np.array_equal(m, label_mask(s, 0.05, 5750.0, seed=0, blocks=split.b1))


def test_split_disjoint_and_covering(small):
    s, _, split = small
    usable = {b for b in s.blocks() if len(block_free_cells(s, b))}
    assert not set(split.b1) & set(split.b2)
    assert set(split.b1) | set(split.b2) == usable
    assert len(split.b1) == len(usable) // 2


# -- training ----------------------------------------------------------------------------


def test_epochs_zero_returns_initial_model(small):
    s, gt, split = small
    cfg = TrainingConfig(epochs=0, hidden=8, seed=4)
    trained = train(s, gt, split, cfg)
    init = GatModel.init(5, hidden=8, seed=4)
    for a, b in zip(trained.model.parameters(), init.parameters()):
        assert np.array_equal(a.data, b.data)
    assert trained.loss_trace == []


def test_training_reduces_loss_and_is_deterministic(small):
    s, gt, split = small
    cfg = TrainingConfig(epochs=15, hidden=8, lr=0.005)
    a = train(s, gt, split, cfg)
    b = train(s, gt, split, cfg)
    assert a.loss_trace[-1] < a.loss_trace[0]
    assert a.loss_trace == b.loss_trace
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(p.data, q.data)


def test_supervised_masks_every_b1_node(small):
    s, gt, split = small
    trained = train(s, gt, split, TrainingConfig(epochs=0, hidden=4))
    lab = trained.masks["label_5750"]
    for b in split.b1:
        c = block_free_cells(s, b)
        assert lab[c[:, 0], c[:, 1]].all()


def test_train_errors(small):
    s, gt, split = small
    with pytest.raises(ValueError):
        train(s, gt, split, TrainingConfig(f_target=1750.0))
    with pytest.raises(ValueError):
        train(s, gt, type(split)((), split.b2), TrainingConfig())
    with pytest.raises(ScenarioError, match="999"):
        train(s, gt, split, TrainingConfig(f_target=999.0))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(lr=0)
    with pytest.raises(ValueError):
        TrainingConfig(mask_fraction=0)
    cfg = TrainingConfig(strategy=EncodingStrategy("transmitter"), f_targets=(2750.0, 5750.0))
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == TrainingConfig.from_dict(cfg.to_dict()).digest()


# -- inference -------------------------------------------------------------------------------


def test_predict_counts_and_determinism(small):
    s, gt, split = small
    trained = train(s, gt, split, TrainingConfig(epochs=2, hidden=8))
    obs = observed_grid(gt, 1750.0, sample_mask(s, 0.05, 1750.0, 0, split.b2))
    b = split.b2[0]
    p1 = predict(trained, s, obs, b, 5750.0)
    p2 = predict(trained, s, obs, b, 5750.0)
    assert len(p1) == len(block_free_cells(s, b))
    assert np.array_equal(p1, p2)
    assert np.all(np.isfinite(p1))


def test_splice_columns_match_predict(small):
    s, gt, split = small
    trained = train(s, gt, split, TrainingConfig(epochs=1, hidden=8))
    obs = observed_grid(gt, 1750.0, sample_mask(s, 0.05, 1750.0, 0, split.b2))
    cache = GraphCache(s, trained.config.strategy)
    tensor = multiband_splice(trained, s, obs, split.b2, cache=cache)
    assert tensor.values.shape[1] == len(s.frequencies_mhz)
    for f in (2750.0, 5750.0):
        col = tensor.grid(f)
        for b in split.b2[:3]:
            c = block_free_cells(s, b)
            assert np.array_equal(col[c[:, 0], c[:, 1]], predict(trained, s, obs, b, f))
    single = multiband_splice(trained, s, obs, split.b2, f_targets=(5750.0,), cache=cache)
    assert np.array_equal(single.values[:, 0], tensor.grid(5750.0).ravel(), equal_nan=True)
    over = multiband_splice(trained, s, obs, split.b2, f_targets=(1750.0,), overwrite_observed=True, cache=cache)
    have = np.isfinite(obs)
    assert np.array_equal(over.grid(1750.0)[have], obs[have])


def test_run_directory_round_trip(small, tmp_path):
    s, gt, split = small
    trained = train(s, gt, split, TrainingConfig(epochs=2, hidden=4))
    out = save_run(trained, tmp_path / "run")
    assert (out / "loss_trace.csv").read_text().startswith("epoch,mean_loss\n")
    assert (out / "model.ckpt.json").exists()
    back = load_run(out)
    assert back.config == trained.config
    assert back.bounds == trained.bounds
    assert back.loss_trace == trained.loss_trace
    assert np.array_equal(back.masks["obs_1750"], trained.masks["obs_1750"])
    obs = observed_grid(gt, 1750.0, trained.masks["obs_1750"])
    b = split.b1[0]
    assert np.array_equal(predict(back, s, obs, b, 5750.0), predict(trained, s, obs, b, 5750.0))
