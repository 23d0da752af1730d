import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from radiomap.evaluation import (
    BUILDING_RGB,
    BlockRmse,
    area_report,
    evaluate_blocks,
    histogram,
    read_ppm,
    render_radiomap,
    rmse_area,
    rmse_block,
)
from radiomap.propagation import RadiomapTensor
from radiomap.scenario import BlockIndex

# -- RMSE ------------------------------------------------------------------------------


def test_rmse_block_examples():
    t = np.array([-60.0, -70.0, -80.0])
    assert rmse_block(t, t).rmse_db == 0.0
    assert rmse_block(t + 2.5, t).rmse_db == pytest.approx(2.5, abs=1e-12)
    # errors 3 and 4: sqrt((9 + 16) / 2)
    r = rmse_block(np.array([3.0, 4.0]), np.zeros(2))
    assert r.rmse_db == pytest.approx(3.5355339059, abs=1e-9)
    assert r.node_count == 2


def test_rmse_block_errors():
    with pytest.raises(ValueError):
        rmse_block(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        rmse_block([], [])
    with pytest.raises(ValueError):
        BlockRmse(BlockIndex(0, 0), -1.0, 3)


def test_rmse_area_examples():
    assert rmse_area([2.0]) == 2.0
    assert rmse_area([3.0, 4.0]) == pytest.approx(3.5355339059, abs=1e-9)
    assert rmse_area([BlockRmse(BlockIndex(0, 0), 5.0, 10)] * 4) == pytest.approx(5.0, abs=1e-12)
    with pytest.raises(ValueError):
        rmse_area([])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.integers(1, 20))
def test_rmse_area_of_equal_blocks(v, n):
    assert rmse_area([v] * n) == pytest.approx(v, rel=1e-12, abs=1e-12)


def test_evaluation_skips_buildings_and_covers_observed():
    occ = np.zeros((4, 4), dtype=bool)
    occ[0, 0] = True
    s = make_scenario(occ, txs=((3, 3),), block=10.0)
    truth = np.full((16, 1), -70.0)
    truth[0] = np.nan
    pred = truth.copy()
    pred[5] = -67.0
    t = RadiomapTensor(truth, 4, 4, (1750.0,))
    p = RadiomapTensor(pred, 4, 4, (1750.0,))
    rm = evaluate_blocks(s, t, p, [BlockIndex(0, 0), BlockIndex(1, 1)], 1750.0)
    assert [b.node_count for b in rm] == [3, 4]
    # grid (1, 1) lies in block (0, 0): one error of 3 dB over its 3 free grids
    assert rm[0].rmse_db == pytest.approx(np.sqrt(9 / 3), abs=1e-12)
    assert rm[1].rmse_db == 0.0
    rep = area_report(s, t, p, [BlockIndex(0, 0), BlockIndex(1, 1)], (1750.0,), "x", 0.05)
    assert rep.area_rmse_db == pytest.approx(np.sqrt((3.0 + 0.0) / 2), abs=1e-12)
    assert rep.per_frequency == {1750.0: rep.area_rmse_db}


# -- rendering ---------------------------------------------------------------------------


def test_render_dimensions_and_buildings(tmp_path):
    g = np.linspace(-100, -50, 12).reshape(3, 4)
    g[1, 2] = np.nan
    img = read_ppm(render_radiomap(g, tmp_path / "a.ppm"))
    assert img.shape == (3, 4, 3)
    assert tuple(img[1, 2]) == BUILDING_RGB
    # bounds default to the finite range: the ends get the first and last palette colors
    assert tuple(img[0, 0]) == (0, 0, 128)
    assert tuple(img[2, 3]) == (200, 0, 0)


def test_render_uniform_field(tmp_path):
    g = np.full((5, 6), -70.0)
    g[0, 0] = np.nan
    img = read_ppm(render_radiomap(g, tmp_path / "u.ppm", palette="gray", lo_db=-90, hi_db=-50))
    free = img.reshape(-1, 3)[1:]
    assert np.all(free == free[0])
    assert tuple(free[0]) == (128, 128, 128)


def test_render_deterministic_and_tensor_input(tmp_path):
    rng = np.random.default_rng(0)
    t = RadiomapTensor(rng.uniform(-120, -40, (20, 2)), 4, 5, (1750.0, 5750.0))
    a = render_radiomap(t, tmp_path / "a.ppm", 5750.0).read_bytes()
    b = render_radiomap(t, tmp_path / "b.ppm", 5750.0).read_bytes()
    assert a == b
    with pytest.raises(ValueError):
        render_radiomap(t, tmp_path / "c.ppm")
    with pytest.raises(KeyError):
        render_radiomap(t, tmp_path / "c.ppm", 999.0)
    with pytest.raises(ValueError):
        render_radiomap(np.zeros((2, 2)), tmp_path / "c.ppm", palette="nope")


# -- histogram -----------------------------------------------------------------------------


def test_histogram_edge_cases():
    edges, counts = histogram([], 1.0)
    assert edges.size == 0 and counts.size == 0
    edges, counts = histogram([-70.0] * 7, 2.0)
    assert counts.tolist() == [7]
    edges, counts = histogram([np.nan, -60.0, np.nan], 1.0)
    assert counts.tolist() == [1]
    with pytest.raises(ValueError):
        histogram([1.0], 0.0)


def test_histogram_uniform_draw():
    # one value per percentile-wide slot: 10 bins of width 10 hold 10 each
    rng = np.random.default_rng(3)
    v = np.arange(100) + rng.uniform(0.01, 0.99, 100)
    edges, counts = histogram(v, 10.0, origin=0.0)
    assert counts.tolist() == [10] * 10
    assert edges[0] == 0.0 and edges[-1] == 100.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-150, 0), max_size=200), st.floats(0.1, 20))
def test_histogram_counts_sum(values, width):
    edges, counts = histogram(values, width)
    assert counts.sum() == len(values)
    assert len(edges) == len(counts) + (1 if len(values) else 0)
