import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from radiomap.propagation import (
    DepthParams,
    GeneratorParams,
    PropagationParams,
    RadiomapTensor,
    generate_ground_truth,
    load_radiomap,
    path_rss,
    radio_depth_exact,
    radio_depth_map,
    save_radiomap,
    total_rss,
)
from radiomap.synthetic import make_synthetic_scenario

NO_SHADOW = GeneratorParams(wall_loss_db_per_m=0.0, shadow_sigma_db=0.0)


def test_path_rss_vanishing_logs():
    assert path_rss(30, PropagationParams(0, 20, 2), 1.0, 1.0) == 30.0


def test_path_rss_hand_value():
    assert path_rss(30, PropagationParams(10, 20, 0), 100.0, 7.0) == pytest.approx(-20.0, abs=1e-12)


def test_path_rss_decade_of_distance():
    p = PropagationParams(5, 20, 2)
    assert path_rss(30, p, 900, 3.0) - path_rss(30, p, 900, 30.0) == pytest.approx(20.0, abs=1e-12)


def test_path_rss_rejects_bad_inputs():
    with pytest.raises(ValueError):
        path_rss(30, PropagationParams(), 0.0, 1.0)
    with pytest.raises(ValueError):
        path_rss(30, PropagationParams(), 1.0, -2.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1, 5000), st.floats(1, 5000), st.floats(1, 1e4), st.floats(1, 1e4))
def test_path_rss_monotone(d1, d2, f1, f2):
    p = PropagationParams(20, 20, 2)
    if d1 < d2:
        assert path_rss(30, p, 1000, d1) > path_rss(30, p, 1000, d2)
    if f1 < f2:
        assert path_rss(30, p, f1, 50) > path_rss(30, p, f2, 50)


def test_total_rss_literal_sum():
    assert total_rss([-50.0]) == -50.0
    assert total_rss([-50.0, -50.0]) == -100.0
    assert total_rss([-40.0, -50.0, -60.0]) == -150.0
    with pytest.raises(ValueError):
        total_rss([])


def test_ground_truth_closed_form_without_walls_or_shadowing():
    occ = np.zeros((6, 7), dtype=bool)
    s = make_scenario(occ, txs=((1, 1), (4, 5)), freqs=(1750.0, 2750.0))
    prop = PropagationParams(12, 18, 2.5)
    gt = generate_ground_truth(s, prop, NO_SHADOW)
    for k, f in enumerate(s.frequencies_mhz):
        for r in range(6):
            for c in range(7):
                terms = []
                for tx in s.transmitters:
                    d = max(math.hypot(r - tx.row, c - tx.col) * 5.0, 2.5)
                    terms.append(30 - 12 - 18 * math.log10(f) - 25 * math.log10(d))
                assert gt.values[r * 7 + c, k] == pytest.approx(sum(terms), abs=1e-9)


def test_ground_truth_wall_penalty():
    # two 5 m building cells on the path: 10 m of wall at 2 dB/m
    occ = np.zeros((1, 11), dtype=bool)
    occ[0, 4:6] = True
    s = make_scenario(occ)
    prop = PropagationParams()
    walls = generate_ground_truth(s, prop, GeneratorParams(wall_loss_db_per_m=2.0, shadow_sigma_db=0.0))
    free = generate_ground_truth(s, prop, NO_SHADOW)
    assert free.values[10, 0] - walls.values[10, 0] == pytest.approx(20.0, abs=1e-9)
    assert walls.values[2, 0] == free.values[2, 0]


def test_ground_truth_buildings_invalid():
    s = make_synthetic_scenario(200, 200, block_size_m=100, seed=1)
    gt = generate_ground_truth(s)
    assert np.array_equal(~gt.valid, s.occupancy)
    assert np.all(np.isfinite(gt.values[gt.valid.ravel()]))


def test_ground_truth_deterministic():
    s = make_synthetic_scenario(200, 200, block_size_m=100, seed=2)
    a = generate_ground_truth(s, gen=GeneratorParams(seed=9))
    b = generate_ground_truth(s, gen=GeneratorParams(seed=9))
    c = generate_ground_truth(s, gen=GeneratorParams(seed=10))
    assert np.array_equal(a.values, b.values, equal_nan=True)
    assert not np.array_equal(a.values, c.values, equal_nan=True)


def test_shadowing_statistics():
    s = make_scenario(np.zeros((100, 100), dtype=bool), txs=((50, 50),), freqs=(1750.0, 5750.0))
    base = generate_ground_truth(s, gen=NO_SHADOW)
    gt = generate_ground_truth(s, gen=GeneratorParams(wall_loss_db_per_m=0.0, shadow_sigma_db=3.0,
                                                      shadow_corr_m=20.0, seed=4))
    shadow = (gt.values - base.values).reshape(100, 100, 2)
    assert abs(shadow.std() - 3.0) < 0.6
    # neighbours are strongly correlated, frequencies partially so
    a, b = shadow[:, :-1, 0].ravel(), shadow[:, 1:, 0].ravel()
    assert np.corrcoef(a, b)[0, 1] > 0.6
    fc = np.corrcoef(shadow[..., 0].ravel(), shadow[..., 1].ravel())[0, 1]
    assert 0.5 < fc < 0.99


def test_depth_free_single_transmitter():
    s = make_scenario(np.zeros((5, 5), dtype=bool), txs=((2, 2),))
    d = radio_depth_map(s, DepthParams(beta=10), 1750.0)
    assert np.allclose(d.values, 10 * math.log10(1750), atol=1e-12)
    assert d.values[0, 0] == pytest.approx(32.4304, abs=1e-3)


def test_depth_zero_at_unit_frequency():
    s = make_synthetic_scenario(200, 200, block_size_m=100, seed=0)
    d = radio_depth_map(s, DepthParams(), 1.0)
    free = ~s.occupancy
    assert np.all(d.values[free] == 0.0)
    assert np.all(np.isnan(d.values[s.occupancy]))


def test_depth_sums_over_transmitters():
    s = make_scenario(np.zeros((4, 6), dtype=bool), txs=((0, 0), (3, 5), (1, 2)))
    d = radio_depth_map(s, DepthParams(beta=10), 2750.0)
    assert np.allclose(d.values, 3 * 10 * math.log10(2750), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1750.0, 3750.0, 5750.0]))
def test_depth_bounds_and_building_removal(seed, f):
    rng = np.random.default_rng(seed)
    occ = rng.random((12, 12)) < 0.3
    occ[0, 0] = occ[11, 11] = False
    s = make_scenario(occ, txs=((0, 0), (11, 11)))
    d = radio_depth_map(s, DepthParams(), f).values
    free = ~occ
    top = 2 * 10 * math.log10(f)
    assert np.all(d[free] >= 0)
    assert np.all(d[free] <= top + 1e-9)
    cleared = radio_depth_map(make_scenario(np.zeros_like(occ), txs=((0, 0), (11, 11))), DepthParams(), f).values
    assert np.all(cleared[free] >= d[free] - 1e-12)


def test_depth_exact_free_map():
    s = make_scenario(np.zeros((3, 3), dtype=bool), txs=((1, 1),))
    d = radio_depth_exact(s, DepthParams(beta=10), 1750.0, 0)
    assert np.allclose(d.values, -10 * math.log10(1750), atol=1e-12)


def test_depth_exact_three_cells():
    # row of three cells, tx at col 0, middle cell a building
    occ = np.array([[False, True, False]])
    s = make_scenario(occ, txs=((0, 0),))
    p = DepthParams(beta=10, c=100.0, alpha=20.0)
    d = radio_depth_exact(s, p, 1000.0, 0).values
    # own cell: T=1, d floored at 2.5 m
    assert d[0, 0] == pytest.approx(100 - 20 * math.log10(2.5) - 30, abs=1e-12)
    assert np.isnan(d[0, 1])
    # far cell: half of the 10 m path crosses the building cell's span
    assert d[0, 2] == pytest.approx(0.5 * (100 - 20 * math.log10(10.0) - 30), abs=1e-12)


def test_depth_exact_vs_alternative_offset():
    # where C - alpha log10 d equals C0, exact = T (C0 - beta log f); the alternative drops C0 and the sign
    s = make_scenario(np.zeros((1, 3), dtype=bool), txs=((0, 0),))
    d_m = 10.0
    p = DepthParams(beta=10, c=40.0, alpha=20.0, c0=40.0 - 20.0 * math.log10(d_m))
    exact = radio_depth_exact(s, p, 1750.0, 0).values[0, 2]
    alt = radio_depth_map(s, p, 1750.0).values[0, 2]
    assert exact + alt == pytest.approx(p.c0, abs=1e-12)


def test_radiomap_round_trips(tmp_path):
    s = make_synthetic_scenario(100, 100, block_size_m=50, seed=5)
    gt = generate_ground_truth(s)
    for name in ("map.csv", "map.bin"):
        save_radiomap(gt, tmp_path / name)
        back = load_radiomap(tmp_path / name, s.rows, s.cols)
        assert back.frequencies_mhz == gt.frequencies_mhz
        assert np.array_equal(back.values, gt.values, equal_nan=True)


def test_csv_header_and_omitted_buildings(tmp_path):
    occ = np.array([[False, True]])
    s = make_scenario(occ, freqs=(1750.0, 2750.0))
    save_radiomap(generate_ground_truth(s), tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "row,col,f_mhz,rss_dbm"
    assert len(lines) == 3
    assert all(l.startswith("0,0,") for l in lines[1:])


def test_binary_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_radiomap(tmp_path / "x.bin")


def test_tensor_rejects_wrong_columns():
    with pytest.raises(ValueError):
        RadiomapTensor(np.zeros((4, 3)), 2, 2, (1.0, 2.0))
