"""Escape probabilities and Newtonian capacity of finite lattice sets.

Two independent Monte Carlo estimators are provided:

* the escape sum ``cap(A) = sum_{x in A} P^x(tau_A = inf)`` with walks
  killed on a ball of radius ``R_esc`` (killing counts as escape);
* the hitting ratio ``P^z(tau_A < inf) / G_D(z)`` averaged over start points
  z on a sphere enclosing A.  By the mean value property of the Newtonian
  kernel the spherical average is exact up to lattice corrections as soon
  as A lies inside the sphere.

Walks skip, in one exact draw, every stretch they provably cannot use to
reach the set (see :mod:`capwalk._kernels`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from numba import njit

from . import _kernels as K
from .green import get_green_table, green_lookup, lattice_tail_constant
from .lattice import RngStream, WalkSegment, derive_stream


@dataclass(frozen=True)
class PointSet:
    """A finite set of lattice points, stored sorted and deduplicated."""

    dim: int
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, self.dim)
        pts = np.unique(pts, axis=0) if len(pts) else pts
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_walk(cls, walk: WalkSegment) -> "PointSet":
        return cls(walk.dim, walk.points)

    @classmethod
    def empty(cls, dim: int) -> "PointSet":
        return cls(dim, np.zeros((0, dim), dtype=np.int64))

    def __len__(self) -> int:
        return self.points.shape[0]

    def union(self, other: "PointSet") -> "PointSet":
        return PointSet(self.dim, np.vstack([self.points, other.points]))

    def intersection(self, other: "PointSet") -> "PointSet":
        if len(self) == 0 or len(other) == 0:
            return PointSet.empty(self.dim)
        both = np.vstack([self.points, other.points])
        _, counts = np.unique(both, axis=0, return_counts=True)
        uniq = np.unique(both, axis=0)
        return PointSet(self.dim, uniq[counts == 2])

    def contains(self, x) -> bool:
        x = np.asarray(getattr(x, "coords", x), dtype=np.int64)
        return bool(np.any(np.all(self.points == x, axis=1)))

    def diameter(self) -> float:
        if len(self) < 2:
            return 0.0
        ext = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.sqrt((ext.astype(float) ** 2).sum()))


@dataclass(frozen=True)
class EscapeConfig:
    """Monte Carlo settings for escape and hitting walks.

    ``radius`` is the kill radius around the centre of the set's bounding
    box; ``None`` picks ``max(2 r_A, r_A + 24)`` with r_A the set's radius.
    """

    radius: float | None = None
    replicates: int = 1
    seed: int = 0
    kill_factor: float = 8.0  # hitting walks are killed at kill_factor * rho

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive")

    def kill_radius(self, set_radius: float) -> float:
        if self.radius is None:
            return max(2.0 * set_radius, set_radius + 24.0)
        if self.radius <= set_radius:
            raise ValueError(
                f"escape radius {self.radius} does not exceed the set radius {set_radius:.2f}"
            )
        return float(self.radius)


@dataclass(frozen=True)
class CapacityEstimate:
    """Monte Carlo estimate with its standard error.

    ``bias_bound`` bounds the upward bias caused by treating walks that reach
    the kill sphere as escaped (escape sum) or as non-hitting (hitting ratio,
    downward).
    """

    mean: float
    stderr: float
    replicates: int
    method: str
    bias_bound: float = 0.0
    per_point: np.ndarray | None = field(default=None, repr=False, compare=False)


def _cubes(dim: int) -> tuple:
    return K.cube_tables(dim)[:4]


# ------------------------------------------------------------ set families


@dataclass(frozen=True)
class SetFamily:
    """Up to 64 subsets of one point set, stored as a bit mask per point.

    Bit k of ``masks[i]`` is set when the i-th point of ``union`` belongs to
    member k.  Escape walks for all members share one trajectory, so
    inclusions between members hold walk by walk: if A is a subset of B then
    every walk that escapes B also escapes A.
    """

    union: PointSet
    masks: np.ndarray = field(repr=False)
    size: int

    def __post_init__(self):
        if not 1 <= self.size <= 64:
            raise ValueError("a family holds between 1 and 64 members")
        masks = np.ascontiguousarray(self.masks, dtype=np.uint64)
        if masks.shape != (len(self.union),):
            raise ValueError("one mask per point of the union is required")
        masks.setflags(write=False)
        object.__setattr__(self, "masks", masks)

    @classmethod
    def from_sets(cls, sets: list[PointSet]) -> "SetFamily":
        if not sets:
            raise ValueError("empty family")
        dim = sets[0].dim
        union = PointSet(dim, np.vstack([s.points for s in sets]))
        masks = np.zeros(len(union), dtype=np.uint64)
        for k, s in enumerate(sets):
            if len(s):
                masks[_rows_of(union.points, s.points)] |= np.uint64(1) << np.uint64(k)
        return cls(union, masks, len(sets))

    def member_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.masks & (np.uint64(1) << np.uint64(k)))

    def member(self, k: int) -> PointSet:
        return PointSet(self.union.dim, self.union.points[self.member_rows(k)])


def _rows_of(sorted_points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row indices of ``queries`` in the lexicographically sorted array."""
    both = np.vstack([sorted_points, queries])
    _, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    rows = inverse[len(sorted_points):]
    if not np.array_equal(inverse[: len(sorted_points)], np.arange(len(sorted_points))):
        raise ValueError("reference points must be sorted and distinct")
    return rows


@njit(cache=True)
def _family_kernel(starts, needed, base_key, replicates, masks, keys, rows, lo, hi, points,
                   node_lo, node_hi, n_leaves, centre, kill2, dim, offsets, prob, alias, reps):
    """Hit masks of positive-time walks, shape (len(starts), replicates)."""
    out = np.zeros((starts.shape[0], replicates), dtype=np.uint64)
    state = np.empty(4, dtype=np.uint64)
    work = np.empty(64 + dim, dtype=np.int64)
    y = np.empty(dim, dtype=np.int64)
    for e in range(starts.shape[0]):
        K.seed_state(K.point_key(base_key, starts[e]), state)
        for r in range(replicates):
            for c in range(dim):
                y[c] = starts[e, c]
            out[e, r] = K.run_family(y, needed[e], masks, keys, rows, lo, hi, points, node_lo,
                                     node_hi, n_leaves, centre, kill2, dim, offsets, prob,
                                     alias, reps, state, work, True)
    return out


def _base_key(cfg: EscapeConfig, stream: RngStream | None, tag: int) -> int:
    stream = stream if stream is not None else derive_stream(cfg.seed, 0)
    return K.stream_key(stream.generator(substream=1 + tag))


@dataclass(frozen=True)
class FamilyEscape:
    """Coupled escape walks of a :class:`SetFamily`.

    ``hits[i, r]`` is the hit mask of the r-th walk from the i-th union
    point.  The walk escaped member k when bit k is clear; only members
    containing the start point are meaningful.  Walks reaching the kill
    radius count as escaped.
    """

    family: SetFamily
    hits: np.ndarray = field(repr=False)
    kill_radius: float
    set_radius: float

    @property
    def replicates(self) -> int:
        return self.hits.shape[1]

    def indicators(self, k: int, rows: np.ndarray | None = None) -> np.ndarray:
        """Escape indicators from member k, zero at points outside it."""
        bit = np.uint64(1) << np.uint64(k)
        hits = self.hits if rows is None else self.hits[rows]
        masks = self.family.masks if rows is None else self.family.masks[rows]
        inside = (masks & bit) != 0
        return (((hits & bit) == 0) & inside[:, None]).astype(np.int8)

    @property
    def counts(self) -> np.ndarray:
        """``counts[i, k]``: escapes from member k among the walks from point i."""
        return np.stack([self.indicators(k).sum(axis=1) for k in range(self.family.size)],
                        axis=1).astype(np.int64)

    def escape_counts(self, k: int) -> np.ndarray:
        """Escape counts of member k, in the member's point order."""
        rows = self.family.member_rows(k)
        return self.indicators(k, rows).sum(axis=1).astype(np.int64)

    def escape(self, k: int) -> np.ndarray:
        """Per-point escape means of member k, in the member's point order."""
        return self.escape_counts(k) / self.replicates

    def capacity(self, k: int) -> CapacityEstimate:
        c = self.escape_counts(k)
        if len(c) == 0:
            return CapacityEstimate(0.0, 0.0, self.replicates, "escape-sum", 0.0, np.zeros(0))
        mean, se, p = capacity_from_counts(c, self.replicates)
        bias = len(c) * truncation_bias_bound(len(c), self.family.union.dim,
                                              self.kill_radius, self.set_radius)
        return CapacityEstimate(mean, se, self.replicates, "escape-sum", bias, p)


def family_escape(family: SetFamily, cfg: EscapeConfig, stream: RngStream | None = None,
                  tag: int = 0) -> FamilyEscape:
    """Run ``cfg.replicates`` coupled escape walks from every point of the union.

    The walks of one start point depend only on (stream, tag, point), so
    the same point in two different families uses common random numbers.
    """
    U = family.union
    if len(U) == 0:
        raise ValueError("escape from the empty set is undefined")
    index = K.SetIndex(U.points)
    kill = cfg.kill_radius(index.radius)
    hits = _family_kernel(U.points, family.masks, np.uint64(_base_key(cfg, stream, tag)),
                          cfg.replicates, family.masks, *index.args, index.centre, kill * kill,
                          U.dim, *_cubes(U.dim))
    return FamilyEscape(family, hits, kill, index.radius)


def summed_stderr(values: np.ndarray) -> float:
    """Standard error of ``sum_x mean_r values[x, r]`` for independent rows.

    With one column the per-row variance is bounded by the second moment.
    """
    values = np.asarray(values, dtype=float)
    r = values.shape[1]
    if r == 1:
        return float(np.sqrt((values[:, 0] ** 2).sum()))
    return float(np.sqrt((values.var(axis=1, ddof=1) / r).sum()))


def escape_indicators(A: PointSet, cfg: EscapeConfig, stream: RngStream | None = None,
                      tag: int = 0, starts: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Escape indicators for walks started at ``starts`` (default: every point of A).

    Returns the (len(starts), replicates) int8 indicator matrix and the
    kill radius used.
    """
    if len(A) == 0:
        raise ValueError("escape from the empty set is undefined")
    index = K.SetIndex(A.points)
    kill = cfg.kill_radius(index.radius)
    pts = A.points if starts is None else np.ascontiguousarray(np.atleast_2d(starts), dtype=np.int64)
    ones = np.ones(len(A), dtype=np.uint64)
    needed = np.ones(len(pts), dtype=np.uint64)
    hits = _family_kernel(pts, needed, np.uint64(_base_key(cfg, stream, tag)), cfg.replicates,
                          ones, *index.args, index.centre, kill * kill, A.dim, *_cubes(A.dim))
    return (hits == 0).astype(np.int8), kill


def truncation_bias_bound(size: int, dim: int, kill: float, set_radius: float) -> float:
    """Upper bound on P^w(tau_A < inf) for |w - centre| >= kill and |A| = size.

    Uses cap(A) <= |A| / G_D(0) and G_D(x) <= c_d |x|^{2-d}.
    """
    g0 = get_green_table(dim).at_origin()
    gap = max(kill - set_radius, 1.0)
    return size / g0 * lattice_tail_constant(dim) * gap ** (2 - dim)


def escape_probability(A: PointSet, x, cfg: EscapeConfig, stream: RngStream | None = None) -> CapacityEstimate:
    """Estimate ``P^x(tau_A = inf)`` with ``cfg.replicates`` walks from x."""
    x = np.asarray(getattr(x, "coords", x), dtype=np.int64).reshape(1, A.dim)
    index = K.SetIndex(A.points)
    if cfg.radius is not None:
        reach = float(np.sqrt(((x[0] - index.centre) ** 2).sum()))
        if cfg.radius <= max(index.radius, reach):
            raise ValueError("escape radius must exceed the set radius and the start distance")
    ind, kill = escape_indicators(A, cfg, stream, starts=x)
    p = ind.mean()
    r = cfg.replicates
    se = float(np.sqrt(p * (1 - p) / max(r - 1, 1)))
    return CapacityEstimate(float(p), se, r, "escape-sum",
                            truncation_bias_bound(len(A), A.dim, kill, index.radius))


def capacity_from_counts(counts: np.ndarray, replicates: int) -> tuple[float, float, np.ndarray]:
    """Capacity, its standard error and per-point escape means from escape counts.

    The capacity is formed as ``sum(counts) / replicates`` so that it is
    exact whenever ``replicates`` is a power of two.  With a single walk per
    point the per-point variances are not identifiable; ``sum p_x (1 - p_x)
    <= |A| pbar (1 - pbar)`` by concavity gives a conservative error instead.
    """
    counts = np.asarray(counts, dtype=np.int64)
    k, r = len(counts), replicates
    p = counts / r
    if r == 1:
        pbar = p.mean()
        var = k * pbar * (1 - pbar) * k / max(k - 1, 1)
    else:
        var = float((p * (1 - p) / (r - 1)).sum())
    return int(counts.sum()) / r, float(np.sqrt(var)), p


def capacity_from_indicators(ind: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Same as :func:`capacity_from_counts` for a (points, replicates) 0/1 matrix."""
    return capacity_from_counts(np.asarray(ind).sum(axis=1), np.asarray(ind).shape[1])


def capacity(A: PointSet, cfg: EscapeConfig, stream: RngStream | None = None, tag: int = 0) -> CapacityEstimate:
    """Escape-sum estimate of cap(A); cap of the empty set is exactly 0."""
    if len(A) == 0:
        return CapacityEstimate(0.0, 0.0, cfg.replicates, "escape-sum", 0.0, np.zeros(0))
    return family_escape(SetFamily(A, np.ones(len(A), dtype=np.uint64), 1), cfg, stream, tag).capacity(0)


# ------------------------------------------------------------- hitting ratio


@njit(cache=True)
def _hitting_kernel(n_walks, rho, base_key, masks, keys, rows, lo, hi, points, node_lo, node_hi,
                    n_leaves, centre, kill2, dim, offsets, prob, alias, reps, gvals, gbinom,
                    gradius, gtail):
    """Per-walk values 1{hit} / G_D(z - c) for z uniform near the sphere of radius rho."""
    out = np.zeros(n_walks)
    state = np.empty(4, dtype=np.uint64)
    work = np.empty(64 + dim, dtype=np.int64)
    K.seed_state(base_key, state)
    y = np.empty(dim, dtype=np.int64)
    dz = np.empty(dim, dtype=np.int64)
    u = np.empty(dim)
    one = np.uint64(1)
    for w in range(n_walks):
        # uniform direction from Gaussian coordinates (Box-Muller)
        norm = 0.0
        c = 0
        while c < dim:
            a = K.next_double(state)
            b = K.next_double(state)
            rad = np.sqrt(-2.0 * np.log(1.0 - a))
            u[c] = rad * np.cos(2 * np.pi * b)
            if c + 1 < dim:
                u[c + 1] = rad * np.sin(2 * np.pi * b)
            c += 2
        for c in range(dim):
            norm += u[c] * u[c]
        norm = np.sqrt(norm)
        for c in range(dim):
            dz[c] = np.int64(np.round(rho * u[c] / norm))
            y[c] = np.int64(centre[c]) + dz[c]
        g = green_lookup(gvals, gbinom, gradius, gtail, dim, dz)
        hit = K.run_family(y, one, masks, keys, rows, lo, hi, points, node_lo, node_hi, n_leaves,
                           centre, kill2, dim, offsets, prob, alias, reps, state, work, False)
        if hit:
            out[w] = 1.0 / g
    return out


def capacity_via_hitting(A: PointSet, rho: float | None, cfg: EscapeConfig,
                         stream: RngStream | None = None, walks: int | None = None) -> CapacityEstimate:
    """Hitting-ratio estimate of cap(A).

    Start points are lattice roundings of ``c + rho u`` with u uniform on the
    unit sphere and c the rounded centre of A's bounding box.  ``rho``
    defaults to ``r_A + 4``; it must exceed ``r_A + 2`` so that no start point
    lies in A.  ``walks`` defaults to ``cfg.replicates``.
    """
    if len(A) == 0:
        return CapacityEstimate(0.0, 0.0, 0, "hitting-ratio")
    index = K.SetIndex(A.points)
    centre = np.round(index.centre)
    r_a = float(np.sqrt(((A.points - centre) ** 2).sum(axis=1)).max())
    rho = r_a + 4.0 if rho is None else float(rho)
    if rho <= r_a + 2.0:
        raise ValueError(f"probe radius {rho} too small for a set of radius {r_a:.2f}")
    n_walks = cfg.replicates if walks is None else int(walks)
    kill = cfg.kill_factor * rho
    table = get_green_table(A.dim)
    vals = _hitting_kernel(n_walks, rho, np.uint64(_base_key(cfg, stream, 1 << 20)),
                           np.ones(len(A), dtype=np.uint64), *index.args, centre, kill * kill,
                           A.dim, *_cubes(A.dim), *table.kernel_args[:4])
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n_walks)) if n_walks > 1 else float("inf")
    # a walk killed at distance K from c hits A later with probability
    # at most cap(A) c_d (K - r_A)^{2-d}, against cap(A) G(rho) for the start
    bias = mean * ((kill - r_a) / rho) ** (2 - A.dim)
    return CapacityEstimate(mean, se, n_walks, "hitting-ratio", bias)


def chi_C(A: PointSet, B: PointSet, cfg: EscapeConfig, stream: RngStream | None = None,
          tag: int = 0) -> tuple[float, float]:
    """cap(A) + cap(B) - cap(A u B) from one coupled family run.

    The three capacities share every walk, so ``chi_C(A, A) = cap(A)``
    holds exactly and each per-point difference is estimated with little
    noise.  Returns ``(value, stderr)``.
    """
    if len(A) == 0 or len(B) == 0:
        return 0.0, 0.0
    res = family_escape(SetFamily.from_sets([A, B, A.union(B)]), cfg, stream, tag)
    value = res.capacity(0).mean + res.capacity(1).mean - res.capacity(2).mean
    diff = (res.indicators(0).astype(np.int64) + res.indicators(1) - res.indicators(2))
    return value, summed_stderr(diff)
