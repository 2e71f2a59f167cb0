import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capwalk.lattice import (
    LatticePoint,
    RngStream,
    WalkSegment,
    derive_stream,
    padded_length,
    reverse_from_midpoint,
    simulate_walk,
    split_blocks,
    split_segment,
)


def test_lattice_point_norms():
    x = LatticePoint((3, 4, 0, 0, 0))
    assert x.dim == 5
    assert x.norm() == 5.0
    assert LatticePoint.origin(4).norm_plus() == 1.0
    with pytest.raises(ValueError):
        LatticePoint((1, 2), dim=3)


def test_stream_is_deterministic_and_keyed():
    a = RngStream(5, 9).generator().integers(0, 2**62, 8)
    b = RngStream(5, 9).generator().integers(0, 2**62, 8)
    c = RngStream(5, 10).generator().integers(0, 2**62, 8)
    d = RngStream(5, 9).generator(1).integers(0, 2**62, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert derive_stream(5, 9) == RngStream(5, 9)
    with pytest.raises(ValueError):
        RngStream(-1, 0)


@given(st.integers(3, 5), st.integers(0, 300), st.integers(0, 2**32))
def test_walk_is_nearest_neighbour_from_origin(dim, n, seed):
    w = simulate_walk(dim, n, RngStream(seed, 0))
    assert w.points.shape == (n + 1, dim)
    assert not w.points[0].any()
    assert np.all(np.abs(np.diff(w.points, axis=0)).sum(axis=1) == 1)
    again = simulate_walk(dim, n, RngStream(seed, 0))
    assert np.array_equal(w.points, again.points)


def test_walk_steps_are_uniform():
    w = simulate_walk(5, 200_000, RngStream(1, 1))
    d = np.diff(w.points, axis=0)
    idx = np.argmax(np.abs(d), axis=1) + 5 * (d.sum(axis=1) < 0)
    counts = np.bincount(idx, minlength=10)
    expected = len(d) / 10
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 30  # 9 degrees of freedom; the 0.9996 quantile is about 30


def test_segment_rejects_jumps():
    with pytest.raises(ValueError):
        WalkSegment(3, 0, np.array([[0, 0, 0], [2, 0, 0]]))
    with pytest.raises(ValueError):
        WalkSegment(3, -1, np.zeros((1, 3)))


@given(st.integers(0, 5), st.integers(1, 40), st.integers(0, 1000))
def test_dyadic_pieces_tile_the_walk(l, k, seed):
    n = k * (1 << l)
    w = simulate_walk(4, n, RngStream(seed, 3))
    pieces = [split_segment(w, l, j) for j in range(1, (1 << l) + 1)]
    assert all(p.n_steps == n >> l for p in pieces)
    glued = np.concatenate([pieces[0].points] + [p.points[1:] for p in pieces[1:]])
    assert np.array_equal(glued, w.points)
    assert [p.start_time for p in pieces] == [(j * n) >> l for j in range(1 << l)]
    blocks = split_blocks(w, 1 << l)
    assert all(np.array_equal(a.points, b.points) for a, b in zip(blocks, pieces))


def test_split_errors():
    w = simulate_walk(5, 10, RngStream(0, 0))
    with pytest.raises(ValueError):
        split_segment(w, 2, 1)
    with pytest.raises(ValueError):
        split_segment(w, 1, 3)


@given(st.integers(0, 10_000), st.integers(0, 8))
def test_padded_length(n, level):
    m = padded_length(n, level)
    assert m % (1 << level) == 0 and n <= m < n + (1 << level)


def test_reverse_from_midpoint():
    w = simulate_walk(5, 64, RngStream(2, 0))
    a, b = reverse_from_midpoint(w)
    assert not a.points[0].any() and not b.points[0].any()
    assert np.array_equal(a.points[-1], w.points[0] - w.points[32])
    assert np.array_equal(b.points[-1], w.points[-1] - w.points[32])
    with pytest.raises(ValueError):
        reverse_from_midpoint(simulate_walk(5, 3, RngStream(2, 0)))
