import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longground.anchors import (
    AnchorGrid,
    anchor_bounds,
    anchor_lengths,
    iou_matrix,
    partition_base,
    temporal_iou,
)
from longground.errors import ParameterError, UsageError
from longground.numerics import Tensor


def test_base_partition_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(13, 5))
    e0, mask = partition_base(Tensor(x), 1, Tensor(np.eye(5)))
    np.testing.assert_array_equal(e0.data, x)
    assert mask.all()


def test_base_partition_pads_last_anchor():
    x = np.ones((25, 3))
    avg = np.tile(np.eye(3), (10, 1)) / 10
    e0, mask = partition_base(Tensor(x), 10, Tensor(avg))
    assert e0.shape == (3, 3)
    assert mask.tolist() == [True, True, True]
    # five real frames, five zero frames in the last chunk
    np.testing.assert_allclose(e0.data[2], 0.5)
    grid = AnchorGrid(25, 1.0, 10, [1])
    assert grid.frame_hi[2] - grid.frame_lo[2] == 5


def test_averaging_kernel_on_constant_input():
    x = np.full((40, 4), 2.5)
    avg = np.tile(np.eye(4), (8, 1)) / 8
    e0, _ = partition_base(Tensor(x), 8, Tensor(avg))
    np.testing.assert_allclose(e0.data, 2.5)


def test_partition_errors():
    with pytest.raises(ParameterError):
        partition_base(Tensor(np.ones((4, 2))), 0, Tensor(np.ones((0, 2))))
    with pytest.raises(UsageError):
        partition_base(Tensor(np.ones((0, 2))), 2, Tensor(np.ones((4, 2))))


@pytest.mark.parametrize("c0,r,expected", [
    (10, [1, 2, 2, 2], [10, 20, 40, 80]),
    (6, [1, 2, 2, 2], [6, 12, 24, 48]),
    (7, [1, 1, 1, 1], [7, 7, 7, 7]),
])
def test_anchor_lengths(c0, r, expected):
    assert anchor_lengths(c0, 4, r) == expected


def test_anchor_lengths_rejects_zero_factor():
    with pytest.raises(ParameterError):
        anchor_lengths(10, 2, [1, 0])


def test_anchor_bounds_examples():
    grid = AnchorGrid(100, 1.0, 10, [1])
    assert anchor_bounds(grid, 1, 0) == (0, 10)
    grid5 = AnchorGrid(100, 5.0, 10, [1])
    assert anchor_bounds(grid5, 1, 3) == pytest.approx((6, 8))
    assert grid5.bounds(1, 3) == pytest.approx((6, 8))
    short = AnchorGrid(25, 1.0, 10, [1])
    assert anchor_bounds(short, 1, 2) == (20, 25)
    with pytest.raises(UsageError):
        anchor_bounds(short, 1, 3)
    with pytest.raises(UsageError):
        short.bounds(2, 0)


def test_grid_counts_for_mad_preset():
    grid = AnchorGrid(800, 5.0, 10, [1, 2, 2, 2])
    assert grid.counts == [80, 40, 20, 10]
    assert grid.size == 150


def test_iou_examples():
    assert temporal_iou((0, 10), (0, 10)) == 1.0
    assert temporal_iou((0, 10), (20, 30)) == 0.0
    assert temporal_iou((0, 10), (5, 15)) == pytest.approx(1 / 3)
    with pytest.raises(UsageError):
        temporal_iou((5, 5), (0, 1))


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(1)
    s = rng.uniform(0, 50, 30)
    e = s + rng.uniform(0.1, 20, 30)
    gs = rng.uniform(0, 50, 5)
    ge = gs + rng.uniform(0.1, 20, 5)
    m = iou_matrix(s, e, gs, ge)
    for q in range(5):
        for a in range(30):
            assert m[q, a] == pytest.approx(temporal_iou((s[a], e[a]), (gs[q], ge[q])), abs=1e-12)


_interval = st.tuples(st.floats(0, 100), st.floats(0.01, 50)).map(lambda t: (t[0], t[0] + t[1]))


@settings(max_examples=200, deadline=None)
@given(_interval, _interval)
def test_iou_symmetric_bounded(a, b):
    v = temporal_iou(a, b)
    assert v == temporal_iou(b, a)
    assert 0.0 <= v <= 1.0
    if a == b:
        assert v == 1.0
    elif v == 1.0:
        assert np.allclose(a, b)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3000), st.integers(1, 12), st.lists(st.integers(1, 3), min_size=1, max_size=5),
       st.floats(0.5, 30))
def test_tiling_per_scale(n, c0, r, fps):
    grid = AnchorGrid(n, fps, c0, r)
    for l in range(1, grid.n_scales + 1):
        sl = grid.scale_slice(l)
        lo, hi = grid.frame_lo[sl], grid.frame_hi[sl]
        assert lo[0] == 0 and hi[-1] == n
        assert np.array_equal(lo[1:], hi[:-1])
        c = grid.lengths[l - 1]
        assert np.all(hi[:-1] - lo[:-1] == c)
        assert np.all(grid.starts[sl] < grid.ends[sl])
        assert grid.ends[sl][-1] == pytest.approx(n / fps)


def test_anchor_count_formula_random_configs():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 5000))
        c0 = int(rng.integers(1, 16))
        r = rng.integers(1, 4, size=int(rng.integers(1, 6))).tolist()
        grid = AnchorGrid(n, 1.0, c0, r)
        assert grid.size == sum(math.ceil(n / c) for c in anchor_lengths(c0, len(r), r))


def test_anchor_objects():
    grid = AnchorGrid(25, 1.0, 10, [1, 2])
    a = grid.anchor(grid.global_index(2, 1))
    assert (a.scale, a.index, a.t_s, a.t_e, a.frame_lo, a.frame_hi) == (2, 1, 20.0, 25.0, 20, 25)
    assert len(grid.anchors()) == grid.size == 3 + 2
    assert len(grid.anchors(1)) == 3
