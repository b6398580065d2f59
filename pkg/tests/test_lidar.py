import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthrescale.core import MapKind, PointSource, RasterMap
from depthrescale.exceptions import InvalidConfig, NoValidPoints
from depthrescale.lidar import BeamConfig, beam_rows, simulate_beams

# hand-evaluated floor((i + 0.5) * H / B)
ROWS_375_16 = [11, 35, 58, 82, 105, 128, 152, 175, 199, 222, 246, 269, 292, 316, 339, 363]
ROWS_375_32 = [5, 17, 29, 41, 52, 64, 76, 87, 99, 111, 123, 134, 146, 158, 169, 181,
               193, 205, 216, 228, 240, 251, 263, 275, 287, 298, 310, 322, 333, 345, 357, 369]


def depth_map(values, valid=None):
    return RasterMap.from_array(np.asarray(values, float), MapKind.METRIC_DEPTH, valid)


@pytest.mark.parametrize("H,B,expected", [
    (100, 1, [50]),
    (8, 4, [1, 3, 5, 7]),
    (375, 16, ROWS_375_16),
    (375, 32, ROWS_375_32),
])
def test_row_formula(H, B, expected):
    assert beam_rows(H, B).tolist() == expected


@given(st.integers(1, 2000), st.data())
def test_rows_strictly_increasing(H, data):
    B = data.draw(st.integers(1, H))
    rows = beam_rows(H, B)
    assert rows.size == B
    assert np.all(np.diff(rows) > 0)
    assert rows[0] >= 0 and rows[-1] < H


def test_invalid_beam_count():
    with pytest.raises(InvalidConfig):
        beam_rows(10, 11)
    with pytest.raises(InvalidConfig):
        BeamConfig(n_beams=0)


def test_saturation_counts_valid_pixels():
    rng = np.random.default_rng(0)
    vals = rng.uniform(1, 20, (12, 9))
    valid = rng.uniform(size=vals.shape) > 0.3
    refs = simulate_beams(depth_map(vals, valid), BeamConfig(n_beams=12))
    assert len(refs) == int(valid.sum())


def test_points_are_exact_and_in_range():
    rng = np.random.default_rng(1)
    vals = rng.uniform(0.5, 100, (40, 30))
    cfg = BeamConfig(n_beams=8, depth_range=(1.0, 80.0))
    refs = simulate_beams(depth_map(vals), cfg)
    rows = set(beam_rows(40, 8).tolist())
    for r in refs:
        assert r.source is PointSource.LIDAR_SIM
        assert int(r.v) in rows and r.u == int(r.u)
        assert r.depth == vals[int(r.v), int(r.u)]
        assert 1.0 <= r.depth <= 80.0


def test_subsample_is_seeded():
    vals = np.full((16, 50), 5.0)
    cfg = BeamConfig(n_beams=4, max_points_per_row=7, seed=3)
    a = simulate_beams(depth_map(vals), cfg)
    b = simulate_beams(depth_map(vals), cfg)
    assert len(a) == 28 and a == b
    other = simulate_beams(depth_map(vals), BeamConfig(n_beams=4, max_points_per_row=7, seed=4))
    assert [r.u for r in other] != [r.u for r in a]


def test_no_valid_points():
    vals = np.ones((6, 6))
    valid = np.ones((6, 6), bool)
    valid[3] = False
    with pytest.raises(NoValidPoints):
        simulate_beams(depth_map(vals, valid), BeamConfig(n_beams=1))


def test_rejects_non_depth():
    disp = RasterMap.from_array(np.ones((4, 4)), MapKind.AFFINE_DISPARITY)
    with pytest.raises(InvalidConfig):
        simulate_beams(disp, BeamConfig(n_beams=2))
