"""Numba building blocks shared by the Monte Carlo estimators.

* A keyed xoshiro256** generator seeded through splitmix64.  Every
  (experiment key, lattice point) pair owns a reproducible stream.
* An open-addressing hash map from lattice points to their row indices.
* A bounding-box tree over Morton-ordered points, giving exact l-infinity
  distances to a point set.
* Exact "walk on cubes".  When the cube of radius m around the walker holds
  no target point, the walk is moved to its first exit point from that cube
  in one draw.  The exit law from the centre is precomputed for every
  m <= MAX_CUBE from the separable continuous-time kernel.  The trace of the
  walk, and hence every hitting event, is unchanged.
"""
from __future__ import annotations

import itertools
import math
import os
from functools import lru_cache

import numpy as np
from numba import njit

MAX_CUBE = 32
LEAF = 8
_COORD_BITS = 12
_EMPTY = np.int64(-1)
_BIG = np.int64(1 << 40)


# ----------------------------------------------------------------- random


@njit(cache=True, inline="always")
def splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def point_key(base, coords):
    """Mix a 64-bit base key with the coordinates of a lattice point."""
    h = splitmix64(np.uint64(base))
    for c in range(coords.shape[0]):
        h = splitmix64(h ^ np.uint64(np.int64(coords[c]) & np.int64(0x7FFFFFFFFFFFFFFF)))
        h = splitmix64(h + np.uint64(c + 1))
    return h


@njit(cache=True)
def seed_state(key, state):
    s = np.uint64(key)
    for i in range(4):
        s = splitmix64(s + np.uint64(i))
        state[i] = s


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def next_u64(state):
    result = _rotl(state[1] * np.uint64(5), 7) * np.uint64(9)
    t = state[1] << np.uint64(17)
    state[2] ^= state[0]
    state[3] ^= state[1]
    state[1] ^= state[2]
    state[0] ^= state[3]
    state[2] ^= t
    state[3] = _rotl(state[3], 45)
    return result


@njit(cache=True)
def next_double(state):
    return np.float64(next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def next_below(state, n):
    """Uniform integer in [0, n) for n < 2^32 (multiply-high)."""
    return np.int64(((next_u64(state) >> np.uint64(32)) * np.uint64(n)) >> np.uint64(32))


def stream_key(generator: np.random.Generator) -> int:
    """A 63-bit key drawn from a (Philox) generator."""
    return int(generator.integers(0, 2**63 - 1, dtype=np.int64))


@njit(cache=True)
def single_step(y, dim, state):
    k = next_below(state, 2 * dim)
    y[k >> 1] += 1 - 2 * (k & 1)


# ------------------------------------------------------------ cube exits


def _killed_kernel(m: int, s: np.ndarray) -> np.ndarray:
    """P(rate-1 walk on Z from 0 is at z at time s, never having left (-m, m)).

    Returns an array of shape (len(s), m) for z = 0..m-1 (the kernel is even).
    """
    k = np.arange(1, 2 * m)
    lam = 1.0 - np.cos(k * np.pi / (2 * m))
    phi0 = np.sin(k * np.pi / 2)
    phiz = np.sin(np.outer(np.arange(m) + m, k) * np.pi / (2 * m))
    return np.clip((np.exp(-np.outer(s, lam)) * phi0) @ phiz.T / m, 0.0, None)


def _orbit_size(rep) -> int:
    size = math.factorial(len(rep))
    for c in np.unique(rep, return_counts=True)[1]:
        size //= math.factorial(int(c))
    return size * 2 ** int(np.count_nonzero(rep))


def cube_exit_law(dim: int, m: int, h: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Exit law of SRW from the centre of the cube [-m, m]^d, by orbit.

    The exit point has one coordinate equal to +-m; the others, sorted by
    absolute value, form the returned representative of length d-1.  In
    continuous time the coordinates are independent killed walks, which gives

        P(exit through face +e_1 at (m, z)) = 1/2 int_0^inf q_s(m-1) prod_j q_s(z_j) ds.

    Returns ``(reps, probs)`` with probs summing to one.
    """
    lam1 = 1.0 - np.cos(np.pi / (2 * m))
    v = np.arange(-40.0, np.log(80.0 / (dim * lam1)) + h, h)
    s = np.exp(v)
    q = _killed_kernel(m, s)
    w = h * s * q[:, m - 1]
    reps = np.array(
        [c[::-1] for c in itertools.combinations_with_replacement(range(m), dim - 1)],
        dtype=np.int64,
    ).reshape(-1, dim - 1)
    probs = np.empty(len(reps))
    for a in range(0, len(reps), 2048):
        block = reps[a : a + 2048]
        f = np.ones((len(block), len(s)))
        for j in range(dim - 1):
            f *= q[:, block[:, j]].T
        probs[a : a + 2048] = f @ w
    sizes = np.array([_orbit_size(r) for r in reps], dtype=float)
    probs = dim * sizes * probs  # 2d faces times the 1/2 in front of the integral
    return reps, probs


@njit(cache=True)
def _alias_table(p):
    n = p.shape[0]
    prob = np.zeros(n)
    alias = np.arange(n)
    scaled = p * n / p.sum()
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        l = large[nl - 1]
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        if scaled[l] < 1.0:
            nl -= 1
            small[ns] = l
            ns += 1
    for i in range(nl):
        prob[large[i]] = 1.0
    for i in range(ns):
        prob[small[i]] = 1.0
    return prob, alias


_CUBE_FIELDS = ("offsets", "prob", "alias", "reps", "mass")


@lru_cache(maxsize=4)
def cube_tables(dim: int, max_cube: int = MAX_CUBE) -> tuple[np.ndarray, ...]:
    """Concatenated alias tables of the cube exit laws for m = 1..max_cube.

    Returns ``(offsets, prob, alias, reps, total_mass)``; the table of radius
    m occupies ``offsets[m]:offsets[m+1]``.  Tables are stored as ``.npz``
    under the Green table cache directory after the first build.
    """
    from .green import cache_dir

    path = cache_dir() / f"cubes_d{dim}_m{max_cube}.npz"
    if path.exists():
        with np.load(path) as data:
            return tuple(np.ascontiguousarray(data[k]) for k in _CUBE_FIELDS)
    tables = build_cube_tables(dim, max_cube)
    tmp = path.with_name(f"{path.stem}.tmp{os.getpid()}.npz")
    np.savez(tmp, **dict(zip(_CUBE_FIELDS, tables)))
    os.replace(tmp, path)
    return tables


def build_cube_tables(dim: int, max_cube: int = MAX_CUBE) -> tuple[np.ndarray, ...]:
    """Uncached construction behind :func:`cube_tables`."""
    offsets = np.zeros(max_cube + 2, dtype=np.int64)
    probs, aliases, reps_all, mass = [], [], [], np.zeros(max_cube + 1)
    for m in range(1, max_cube + 1):
        reps, p = cube_exit_law(dim, m)
        mass[m] = p.sum()
        pr, al = _alias_table(p)
        offsets[m + 1] = offsets[m] + len(p)
        probs.append(pr)
        aliases.append(al + offsets[m])
        reps_all.append(reps)
    offsets[1] = 0
    offsets[0] = 0
    return (
        offsets,
        np.concatenate(probs),
        np.concatenate(aliases).astype(np.int64),
        np.ascontiguousarray(np.vstack(reps_all).astype(np.int64)),
        mass,
    )


@njit(cache=True)
def cube_move(y, m, dim, offsets, prob, alias, reps, state, work):
    """Move ``y`` to the exit point of SRW from the cube of radius ``m`` around it.

    ``work`` is an int64 scratch array of length at least ``dim``.
    """
    if m == 1:
        single_step(y, dim, state)
        return
    base = offsets[m]
    size = offsets[m + 1] - base
    u = next_u64(state)
    idx = base + np.int64(((u >> np.uint64(32)) * np.uint64(size)) >> np.uint64(32))
    frac = np.float64(u & np.uint64(0xFFFFFFFF)) * (1.0 / 4294967296.0)
    if frac >= prob[idx]:
        idx = alias[idx]
    face = next_below(state, 2 * dim)
    fc = face >> 1
    y[fc] += m * (1 - 2 * (face & 1))
    # the remaining coordinates receive the representative in random order and signs
    j = 0
    for c in range(dim):
        if c != fc:
            work[j] = c
            j += 1
    for i in range(dim - 2, 0, -1):
        k = next_below(state, i + 1)
        t = work[i]
        work[i] = work[k]
        work[k] = t
    bits = next_u64(state)
    for i in range(dim - 1):
        v = reps[idx, i]
        if (bits >> np.uint64(i)) & np.uint64(1):
            v = -v
        y[work[i]] += v


# ------------------------------------------------------------- point sets


@njit(cache=True)
def pack(y, lo, dim):
    key = np.int64(0)
    for c in range(dim):
        key = (key << np.int64(_COORD_BITS)) | np.int64(y[c] - lo[c])
    return key


@njit(cache=True, inline="always")
def _slot(key, mask):
    h = np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)
    return np.int64(h >> np.uint64(20)) & mask


@njit(cache=True)
def build_hash(points, lo, dim, size):
    """Open-addressing table: packed key and row index of every point."""
    keys = np.full(size, _EMPTY, dtype=np.int64)
    rows = np.full(size, -1, dtype=np.int64)
    mask = size - 1
    for e in range(points.shape[0]):
        key = pack(points[e], lo, dim)
        s = _slot(key, mask)
        while keys[s] != _EMPTY and keys[s] != key:
            s = (s + 1) & mask
        keys[s] = key
        rows[s] = e
    return keys, rows


@njit(cache=True)
def lookup(y, keys, rows, lo, hi, dim):
    """Row index of ``y`` in the indexed point array, or -1."""
    for c in range(dim):
        if y[c] < lo[c] or y[c] > hi[c]:
            return -1
    key = pack(y, lo, dim)
    mask = keys.shape[0] - 1
    s = _slot(key, mask)
    while True:
        k = keys[s]
        if k == key:
            return rows[s]
        if k == _EMPTY:
            return -1
        s = (s + 1) & mask


@njit(cache=True)
def _morton(points, lo, dim):
    codes = np.zeros(points.shape[0], dtype=np.int64)
    for e in range(points.shape[0]):
        code = np.int64(0)
        for b in range(_COORD_BITS - 1, -1, -1):
            for c in range(dim):
                code = (code << np.int64(1)) | ((points[e, c] - lo[c]) >> b) & 1
        codes[e] = code
    return codes


@njit(cache=True)
def _build_tree(points, dim, n_leaves_pow2):
    n = points.shape[0]
    node_lo = np.full((2 * n_leaves_pow2, dim), _BIG, dtype=np.int64)
    node_hi = np.full((2 * n_leaves_pow2, dim), -_BIG, dtype=np.int64)
    for e in range(n):
        leaf = n_leaves_pow2 + e // LEAF
        for c in range(dim):
            if points[e, c] < node_lo[leaf, c]:
                node_lo[leaf, c] = points[e, c]
            if points[e, c] > node_hi[leaf, c]:
                node_hi[leaf, c] = points[e, c]
    for i in range(n_leaves_pow2 - 1, 0, -1):
        for c in range(dim):
            node_lo[i, c] = min(node_lo[2 * i, c], node_lo[2 * i + 1, c])
            node_hi[i, c] = max(node_hi[2 * i, c], node_hi[2 * i + 1, c])
    return node_lo, node_hi


@njit(cache=True, inline="always")
def _box_linf(y, node_lo, node_hi, i, dim):
    d = np.int64(0)
    for c in range(dim):
        g = node_lo[i, c] - y[c]
        if y[c] - node_hi[i, c] > g:
            g = y[c] - node_hi[i, c]
        if g > d:
            d = g
    return d


@njit(cache=True)
def linf_distance(y, points, node_lo, node_hi, n_leaves_pow2, dim, cap, stack):
    """min(cap, l-infinity distance from y to the point set).

    ``stack`` is an int64 scratch array of length at least 64.
    """
    return linf_nearest(y, points, node_lo, node_hi, n_leaves_pow2, dim, cap, stack, -1)[0]


@njit(cache=True)
def linf_nearest(y, points, node_lo, node_hi, n_leaves_pow2, dim, cap, stack, hint):
    """``linf_distance`` seeded with the point of row ``hint`` (ignored when negative).

    A nearby seed tightens the pruning bound from the start; the distance
    returned is the same.  Also returns the row of a nearest point, or
    ``hint`` when no point lies closer than the seed and the cap.
    """
    best = np.int64(cap)
    arg = hint
    if hint >= 0:
        d = np.int64(0)
        for c in range(dim):
            g = abs(points[hint, c] - y[c])
            if g > d:
                d = g
        if d < best:
            best = d
    if _box_linf(y, node_lo, node_hi, 1, dim) >= best:
        return best, arg
    stack[0] = 1
    top = 1
    n = points.shape[0]
    while top > 0:
        top -= 1
        i = stack[top]
        if _box_linf(y, node_lo, node_hi, i, dim) >= best:
            continue
        if i >= n_leaves_pow2:
            a = (i - n_leaves_pow2) * LEAF
            b = min(a + LEAF, n)
            for e in range(a, b):
                d = np.int64(0)
                for c in range(dim):
                    g = abs(points[e, c] - y[c])
                    if g > d:
                        d = g
                if d < best:
                    best = d
                    arg = e
        else:
            dl = _box_linf(y, node_lo, node_hi, 2 * i, dim)
            dr = _box_linf(y, node_lo, node_hi, 2 * i + 1, dim)
            # push the farther child first so the nearer one is explored first
            if dl <= dr:
                if dr < best:
                    stack[top] = 2 * i + 1
                    top += 1
                if dl < best:
                    stack[top] = 2 * i
                    top += 1
            else:
                if dl < best:
                    stack[top] = 2 * i
                    top += 1
                if dr < best:
                    stack[top] = 2 * i + 1
                    top += 1
    return best, arg


class SetIndex:
    """Membership hash and l-infinity distance tree for one finite point set.

    Row indices returned by :func:`lookup` refer to the input order of
    ``points``.
    """

    def __init__(self, points: np.ndarray):
        pts = np.ascontiguousarray(points, dtype=np.int64)
        if len(pts) == 0:
            raise ValueError("cannot index the empty set")
        self.dim = pts.shape[1]
        self.lo = pts.min(axis=0)
        self.hi = pts.max(axis=0)
        if np.any(self.hi - self.lo >= (1 << _COORD_BITS)):
            raise ValueError("point set too wide for the packed hash keys")
        size = 1 << max(4, int(np.ceil(np.log2(4 * len(pts)))))
        self.keys, self.rows = build_hash(pts, self.lo, self.dim, size)
        order = np.argsort(_morton(pts, self.lo, self.dim), kind="stable")
        self.sorted_points = np.ascontiguousarray(pts[order])
        leaves = -(-len(pts) // LEAF)
        self.n_leaves = 1 << max(0, int(np.ceil(np.log2(leaves))))
        self.node_lo, self.node_hi = _build_tree(self.sorted_points, self.dim, self.n_leaves)
        self.centre = (self.lo + self.hi) / 2.0
        self.radius = float(np.sqrt(((pts - self.centre) ** 2).sum(axis=1)).max())

    @property
    def args(self) -> tuple:
        return (self.keys, self.rows, self.lo, self.hi, self.sorted_points, self.node_lo,
                self.node_hi, self.n_leaves)


@njit(cache=True)
def run_family(y, needed, masks, keys, rows, lo, hi, points, node_lo, node_hi, n_leaves,
               centre, kill2, dim, offsets, prob, alias, reps, state, work, positive):
    """Walk from ``y`` through a family of subsets of one indexed set U.

    ``masks[k]`` holds the bits of the family members containing the k-th
    point of U.  The walk stops once every bit of ``needed`` has been hit
    or when it leaves the kill ball, and returns the accumulated hit mask.
    Cube moves are sized by the distance to U, so one trajectory is shared
    by all members.  With ``positive`` the first step is always taken, so
    only visits at strictly positive times count.  ``work`` is int64
    scratch of length at least ``64 + dim``.
    """
    max_cube = offsets.shape[0] - 2
    stack = work[dim:]
    hit = np.uint64(0)
    if positive:
        single_step(y, dim, state)
    check = True
    near = np.int64(-1)
    while True:
        if check:
            row = lookup(y, keys, rows, lo, hi, dim)
            if row >= 0:
                hit |= masks[row]
                if hit & needed == needed:
                    return hit
        r2 = 0.0
        for c in range(dim):
            t = y[c] - centre[c]
            r2 += t * t
        if r2 >= kill2:
            return hit
        dist, near = linf_nearest(y, points, node_lo, node_hi, n_leaves, dim, max_cube + 1, stack,
                                  near)
        if dist >= 2:
            cube_move(y, dist - 1, dim, offsets, prob, alias, reps, state, work)
            check = False
        else:
            single_step(y, dim, state)
            check = True
