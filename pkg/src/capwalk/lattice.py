"""Lattice points, keyed random streams and simple random walk paths.

Walk paths are stored as ``(n + 1, d)`` int32 arrays.  Dyadic pieces
``S[2^-l n (j-1), 2^-l n j]`` share their endpoints with their neighbours,
so concatenating the pieces of one level reproduces the walk.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

SUPPORTED_DIMS = (3, 4, 5)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class LatticePoint:
    """An integer point of Z^d."""

    coords: tuple[int, ...]
    dim: int = -1

    def __post_init__(self):
        coords = tuple(int(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        if self.dim == -1:
            object.__setattr__(self, "dim", len(coords))
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {len(coords)}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=np.int64)

    def norm(self) -> float:
        return float(np.sqrt(sum(c * c for c in self.coords)))

    def norm_plus(self) -> float:
        """Euclidean norm floored at one."""
        return max(self.norm(), 1.0)

    @classmethod
    def origin(cls, dim: int) -> "LatticePoint":
        return cls((0,) * dim)


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    The pair is used verbatim as the 128-bit Philox key, so distinct pairs
    never collide.  Independent substreams of one key are separated through
    the top word of the Philox counter.
    """

    seed: int
    stream_id: int

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self, substream: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.seed, self.stream_id], dtype=np.uint64),
            counter=np.array([0, 0, 0, substream & _MASK64], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)

    def first_draw(self) -> int:
        return int(self.generator().bit_generator.random_raw())


def derive_stream(seed: int, replicate: int) -> RngStream:
    """Stream for one replicate of an experiment seeded with ``seed``."""
    return RngStream(int(seed) & _MASK64, int(replicate) & _MASK64)


@dataclass(frozen=True)
class WalkSegment:
    """A nearest-neighbour lattice path with its absolute start time."""

    dim: int
    start_time: int
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.int32)
        if pts.ndim != 2 or pts.shape[1] != self.dim or pts.shape[0] < 1:
            raise ValueError(f"points must have shape (k+1, {self.dim})")
        if self.start_time < 0:
            raise ValueError("start_time must be nonnegative")
        if pts.shape[0] > 1:
            steps = np.abs(np.diff(pts, axis=0)).sum(axis=1)
            if np.any(steps != 1):
                raise ValueError("consecutive points must be lattice neighbours")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    def __len__(self) -> int:
        return self.n_steps

    def range_points(self) -> np.ndarray:
        """Distinct visited points, sorted lexicographically."""
        return np.unique(self.points, axis=0)

    def translate(self, shift) -> "WalkSegment":
        return WalkSegment(self.dim, self.start_time, self.points + np.asarray(shift, dtype=np.int32))


@njit(cache=True)
def _walk_kernel(rng, dim, n, out):
    two_d = 2 * dim
    for t in range(n):
        k = int(rng.random() * two_d)
        if k >= two_d:
            k = two_d - 1
        for c in range(dim):
            out[t + 1, c] = out[t, c]
        if k < dim:
            out[t + 1, k] += 1
        else:
            out[t + 1, k - dim] -= 1


def walk_array(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw ``(n + 1, dim)`` path of a simple random walk from the origin."""
    out = np.zeros((n + 1, dim), dtype=np.int32)
    _walk_kernel(rng, dim, n, out)
    return out


def simulate_walk(dim: int, n: int, stream: RngStream, substream: int = 0) -> WalkSegment:
    """Simple random walk of ``n`` steps started at the origin."""
    if dim < 3:
        raise ValueError("dimension must be at least 3 (transient walks only)")
    if n < 0:
        raise ValueError("n must be nonnegative")
    return WalkSegment(dim, 0, walk_array(dim, n, stream.generator(substream)))


def padded_length(n: int, level: int) -> int:
    """Smallest multiple of ``2**level`` that is at least ``n``."""
    q = 1 << level
    return -(-n // q) * q


def split_segment(walk: WalkSegment, l: int, j: int) -> WalkSegment:
    """Piece ``j`` (1-based) of ``2**l`` equal pieces, endpoints included."""
    n = walk.n_steps
    q = 1 << l
    if l < 0 or not 1 <= j <= q:
        raise ValueError(f"piece index {j} out of range for level {l}")
    if n % q:
        raise ValueError(f"walk length {n} not divisible by 2**{l}")
    h = n // q
    a = h * (j - 1)
    return WalkSegment(walk.dim, walk.start_time + a, walk.points[a : a + h + 1])


def split_blocks(walk: WalkSegment, b: int) -> list[WalkSegment]:
    """Split into ``b`` consecutive equal blocks sharing endpoints."""
    n = walk.n_steps
    if b < 1 or n % b:
        raise ValueError(f"walk length {n} not divisible by {b}")
    h = n // b
    return [
        WalkSegment(walk.dim, walk.start_time + h * i, walk.points[h * i : h * (i + 1) + 1])
        for i in range(b)
    ]


def reverse_from_midpoint(walk: WalkSegment) -> tuple[WalkSegment, WalkSegment]:
    """Re-root both halves at the midpoint.

    The first half is time-reversed, so both outputs start at the origin and
    are simple random walks of ``n / 2`` steps.
    """
    n = walk.n_steps
    if n % 2:
        raise ValueError("walk length must be even")
    m = n // 2
    mid = walk.points[m]
    first = walk.points[m::-1] - mid
    second = walk.points[m:] - mid
    return WalkSegment(walk.dim, 0, first), WalkSegment(walk.dim, 0, second)
