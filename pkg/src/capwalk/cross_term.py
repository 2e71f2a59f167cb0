"""Cross terms between walk ranges and the error terms around them.

Two summation conventions appear and are kept apart by name:

* set sums run over distinct points, each counted once (``chi``, the
  capacity deficit and the set form of the error bound);
* time sums run over every time index ``0..n`` of a segment, so a point
  visited k times is counted k times (``error_bound_rhs``, ``xyzw_stats``,
  ``zn_stat``).

Escape probabilities attached to a range come from coupled walks (see
:class:`capwalk.capacity.SetFamily`): one trajectory per start point is
shared by the whole range and all of its blocks, so inequalities such as
``P^x(tau_block = inf) >= P^x(tau_range = inf)`` hold walk by walk.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .capacity import (
    EscapeConfig,
    FamilyEscape,
    PointSet,
    SetFamily,
    capacity,
    family_escape,
    summed_stderr,
)
from . import _kernels as K
from .green import GreenTable, green_from_abs, get_green_table
from .lattice import RngStream, WalkSegment, split_blocks


# ------------------------------------------------------------ pair kernels


_BLOCK = 32


@njit(cache=True)
def _block_boxes(P, bs):
    nb = (P.shape[0] + bs - 1) // bs
    dim = P.shape[1]
    lo = np.empty((nb, dim), dtype=np.int64)
    hi = np.empty((nb, dim), dtype=np.int64)
    for b in range(nb):
        for c in range(dim):
            lo[b, c] = P[b * bs, c]
            hi[b, c] = P[b * bs, c]
        for e in range(b * bs, min((b + 1) * bs, P.shape[0])):
            for c in range(dim):
                v = P[e, c]
                if v < lo[b, c]:
                    lo[b, c] = v
                if v > hi[b, c]:
                    hi[b, c] = v
    return lo, hi


@njit(cache=True, fastmath=True)
def _far_block(Pt, Qt, p0, p1, q0, q1, tail, dim, power, gb):
    # every pair of the two blocks lies beyond the table: closed-form tail
    for p in range(p0, p1):
        for q in range(q0, q1):
            r2 = 0.0
            for c in range(dim):
                t = Pt[c, p] - Qt[c, q]
                r2 += t * t
            if dim == 5:
                g = tail / (r2 * np.sqrt(r2))
            elif dim == 4:
                g = tail / r2
            else:
                g = tail / np.sqrt(r2)
            gb[p - p0, q - q0] = g * g if power == 2 else g


@njit(cache=True)
def _pair_fields(P, V, Q, W, values, binom, radius, tail, dim, power):
    """Fused potentials of two weighted point clouds.

    Returns ``FP[p, k] = sum_q G(P_p - Q_q)^power W[q, k]`` and
    ``FQ[q, k] = sum_p G(P_p - Q_q)^power V[p, k]`` with one Green
    evaluation per pair.  Points are processed in blocks; block pairs whose
    bounding boxes are farther apart than the table radius use the tail law
    directly.  Inputs should be spatially ordered for the pruning to help.
    """
    n_p, n_q = P.shape[0], Q.shape[0]
    kw, kv = W.shape[1], V.shape[1]
    bs = _BLOCK
    FP = np.zeros((n_p, kw))
    FQ = np.zeros((n_q, kv))
    if n_p == 0 or n_q == 0:
        return FP, FQ
    lp, hp = _block_boxes(P, bs)
    lq, hq = _block_boxes(Q, bs)
    Pt = np.ascontiguousarray(P.T.astype(np.float64))
    Qt = np.ascontiguousarray(Q.T.astype(np.float64))
    buf = np.empty(dim, dtype=np.int64)
    gb = np.empty((bs, bs))
    for bp in range(lp.shape[0]):
        p0 = bp * bs
        p1 = min(p0 + bs, n_p)
        for bq in range(lq.shape[0]):
            q0 = bq * bs
            q1 = min(q0 + bs, n_q)
            gap = 0
            for c in range(dim):
                g1 = lq[bq, c] - hp[bp, c]
                g2 = lp[bp, c] - hq[bq, c]
                if g1 > gap:
                    gap = g1
                if g2 > gap:
                    gap = g2
            if gap > radius:
                _far_block(Pt, Qt, p0, p1, q0, q1, tail, dim, power, gb)
            else:
                for p in range(p0, p1):
                    for q in range(q0, q1):
                        for c in range(dim):
                            buf[c] = abs(P[p, c] - Q[q, c])
                        g = green_from_abs(values, binom, radius, tail, dim, buf)
                        gb[p - p0, q - q0] = g * g if power == 2 else g
            for p in range(p0, p1):
                for k in range(kw):
                    acc = 0.0
                    for q in range(q0, q1):
                        acc += gb[p - p0, q - q0] * W[q, k]
                    FP[p, k] += acc
            for q in range(q0, q1):
                for k in range(kv):
                    acc = 0.0
                    for p in range(p0, p1):
                        acc += gb[p - p0, q - q0] * V[p, k]
                    FQ[q, k] += acc
    return FP, FQ


def _spatial_order(P: np.ndarray) -> np.ndarray:
    if len(P) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argsort(K._morton(P, P.min(axis=0), P.shape[1]), kind="stable")


def _columns(a, rows: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(rows, 1) if a.ndim <= 1 else a.reshape(rows, a.shape[-1])


def pair_fields(P, V, Q, W, green: GreenTable, power: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Potentials ``sum_q G(p - q)^power W[q]`` at P and ``sum_p G(p - q)^power V[p]`` at Q.

    ``V`` and ``W`` are weight vectors or matrices with one column per
    weighting; outputs always have one column per weighting.
    """
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    P = np.ascontiguousarray(P, dtype=np.int64)
    Q = np.ascontiguousarray(Q, dtype=np.int64)
    V, W = _columns(V, len(P)), _columns(W, len(Q))
    if len(P) == 0 or len(Q) == 0:
        return np.zeros((len(P), W.shape[1])), np.zeros((len(Q), V.shape[1]))
    op, oq = _spatial_order(P), _spatial_order(Q)
    FP, FQ = _pair_fields(np.ascontiguousarray(P[op]), np.ascontiguousarray(V[op]),
                          np.ascontiguousarray(Q[oq]), np.ascontiguousarray(W[oq]),
                          *green.kernel_args, power)
    out_p = np.empty_like(FP)
    out_q = np.empty_like(FQ)
    out_p[op] = FP
    out_q[oq] = FQ
    return out_p, out_q


def _green(dim: int, green: GreenTable | None) -> GreenTable:
    if green is None:
        return get_green_table(dim)
    if green.dim != dim:
        raise ValueError(f"Green table of dimension {green.dim} used in dimension {dim}")
    return green


def occupation(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct points (sorted) and their visit counts."""
    pts, counts = np.unique(np.asarray(points, dtype=np.int64), axis=0, return_counts=True)
    return np.ascontiguousarray(pts), counts


# --------------------------------------------------------- decorated ranges


@dataclass(frozen=True)
class DecoratedRange:
    """A walk segment with escape estimates at each distinct point of its range.

    ``points`` are the distinct points in lexicographic order, ``visits``
    their visit counts over the time indices of the segment and
    ``escape_counts`` the number of walks (out of ``replicates``) that
    never returned to the range.
    """

    walk: WalkSegment
    points: np.ndarray = field(repr=False)
    visits: np.ndarray = field(repr=False)
    escape_counts: np.ndarray = field(repr=False)
    replicates: int

    def __post_init__(self):
        if not (len(self.points) == len(self.visits) == len(self.escape_counts)):
            raise ValueError("one visit count and one escape count per point are required")
        if np.any(self.escape_counts < 0) or np.any(self.escape_counts > self.replicates):
            raise ValueError("escape counts must lie in [0, replicates]")

    @property
    def dim(self) -> int:
        return self.walk.dim

    @property
    def escape(self) -> np.ndarray:
        """Per-point escape probability estimates, in [0, 1]."""
        return self.escape_counts / self.replicates

    @property
    def escape_variance(self) -> np.ndarray:
        """Per-point variance of :attr:`escape`; with one walk, its second moment."""
        p = self.escape
        if self.replicates == 1:
            return p
        return p * (1 - p) / (self.replicates - 1)

    @property
    def capacity(self) -> float:
        return int(self.escape_counts.sum()) / self.replicates

    @property
    def exact_capacity(self) -> Fraction:
        return Fraction(int(self.escape_counts.sum()), self.replicates)

    def point_set(self) -> PointSet:
        return PointSet(self.dim, self.points)

    def __len__(self) -> int:
        return len(self.points)


def _piece_from_family(walk: WalkSegment, res: FamilyEscape, k: int) -> DecoratedRange:
    rows = res.family.member_rows(k)
    pts, visits = occupation(walk.points)
    if not np.array_equal(pts, res.family.union.points[rows]):
        raise ValueError("family member does not match the segment range")
    return DecoratedRange(walk, pts, visits, res.escape_counts(k), res.replicates)


def decorate(walk: WalkSegment, cfg: EscapeConfig, stream: RngStream | None = None,
             tag: int = 0) -> DecoratedRange:
    """Estimate the escape probability from the range at each distinct range point."""
    if walk.points.shape[0] == 0:
        raise ValueError("cannot decorate an empty walk")
    pts, _ = occupation(walk.points)
    family = SetFamily(PointSet(walk.dim, pts), np.ones(len(pts), dtype=np.uint64), 1)
    return _piece_from_family(walk, family_escape(family, cfg, stream, tag), 0)


@dataclass(frozen=True)
class BlockDecoration:
    """A walk, its blocks for several block counts, and coupled decorations.

    ``blocks[b]`` lists the ``b`` consecutive blocks (sharing endpoints)
    decorated with their own local escape probabilities; ``whole`` is the
    full range.  All decorations come from one family run.
    """

    walk: WalkSegment
    whole: DecoratedRange
    blocks: dict
    result: FamilyEscape = field(repr=False)


def decorate_blocks(walk: WalkSegment, block_counts, cfg: EscapeConfig,
                    stream: RngStream | None = None, tag: int = 0) -> BlockDecoration:
    """Decorate the whole range and its blocks for each count in ``block_counts``.

    At most 63 blocks in total are supported (one bit per family member).
    """
    block_counts = sorted({int(b) for b in block_counts if int(b) > 1})
    pieces: list[tuple[int, WalkSegment]] = [(1, walk)]
    for b in block_counts:
        pieces.extend((b, seg) for seg in split_blocks(walk, b))
    if len(pieces) > 64:
        raise ValueError("too many blocks for one coupled family")
    sets = [PointSet(walk.dim, seg.points) for _, seg in pieces]
    res = family_escape(SetFamily.from_sets(sets), cfg, stream, tag)
    decorated = [_piece_from_family(seg, res, k) for k, (_, seg) in enumerate(pieces)]
    blocks: dict[int, list[DecoratedRange]] = {1: [decorated[0]]}
    k = 1
    for b in block_counts:
        blocks[b] = decorated[k : k + b]
        k += b
    return BlockDecoration(walk, decorated[0], blocks, res)


# -------------------------------------------------------------- cross term


@dataclass(frozen=True)
class CrossTermValue:
    """A cross term with a delta-method standard error.

    ``blocks`` holds the (i, j) block contributions of a localized cross
    term.  The error treats the decorations of the two ranges as
    independent.
    """

    value: float
    stderr: float
    blocks: np.ndarray | None = field(default=None, repr=False)


def chi(A: DecoratedRange, B: DecoratedRange, green: GreenTable | None = None) -> CrossTermValue:
    """``sum_{x in A} sum_{y in B} e_A(x) G_D(x - y) e_B(y)`` over distinct points."""
    if A.dim != B.dim:
        raise ValueError("ranges of different dimension")
    g = _green(A.dim, green)
    FA, FB = pair_fields(A.points, A.escape, B.points, B.escape, g)
    value = float(A.escape @ FA[:, 0])
    var = float((FA[:, 0] ** 2 * A.escape_variance).sum() + (FB[:, 0] ** 2 * B.escape_variance).sum())
    return CrossTermValue(max(value, 0.0), float(np.sqrt(var)))


def chi_localized(S: WalkSegment, S_tilde: WalkSegment, b: int, cfg: EscapeConfig,
                  stream: RngStream | None = None, green: GreenTable | None = None,
                  decorations: tuple[BlockDecoration, BlockDecoration] | None = None) -> CrossTermValue:
    """Sum of cross terms over all pairs of blocks, each block with its own escapes.

    ``b`` must divide both walk lengths.  ``decorations`` may supply
    precomputed block decorations (which must contain block count ``b``);
    otherwise both walks are decorated with ``stream`` under tags 0 and 1.
    """
    if b < 1:
        raise ValueError("block count must be positive")
    if decorations is None:
        decorations = (decorate_blocks(S, [b], cfg, stream, tag=0),
                       decorate_blocks(S_tilde, [b], cfg, stream, tag=1))
    da, db = decorations
    if b not in da.blocks or b not in db.blocks:
        raise ValueError(f"decorations do not contain block count {b}")
    g = _green(S.dim, green)
    out = np.zeros((b, b))
    var = 0.0
    for i, A in enumerate(da.blocks[b]):
        for j, B in enumerate(db.blocks[b]):
            c = chi(A, B, g)
            out[i, j] = c.value
            var += c.stderr**2
    return CrossTermValue(float(out.sum()), float(np.sqrt(var)), out)


# ------------------------------------------------------------- error terms


@dataclass(frozen=True)
class EpsilonTerm:
    """``eps = 2 chi - chi_C`` with its ingredients from one coupled run."""

    value: float
    stderr: float
    chi: float
    chi_C: float
    cap_A: float
    cap_B: float
    cap_union: float


def epsilon_term(A, B, cfg: EscapeConfig, stream: RngStream | None = None, tag: int = 0,
                 green: GreenTable | None = None) -> EpsilonTerm:
    """``2 chi(A, B) - chi_C(A, B)``.

    A and B are walk segments or decorated ranges; in both cases the
    decorations and the three capacities are recomputed from one coupled
    run over {A, B, A u B}, so every term shares the same walks.
    """
    wa = A.walk if isinstance(A, DecoratedRange) else A
    wb = B.walk if isinstance(B, DecoratedRange) else B
    sa, sb = PointSet(wa.dim, wa.points), PointSet(wb.dim, wb.points)
    res = family_escape(SetFamily.from_sets([sa, sb, sa.union(sb)]), cfg, stream, tag)
    da, db = _piece_from_family(wa, res, 0), _piece_from_family(wb, res, 1)
    c = chi(da, db, green)
    cu = res.capacity(2).mean
    chi_c = da.capacity + db.capacity - cu
    value = 2 * c.value - chi_c
    # the deficit's per-point differences share walks; bound their variance separately
    diff = res.indicators(0).astype(np.int64) + res.indicators(1) - res.indicators(2)
    se = float(np.sqrt((2 * c.stderr) ** 2 + summed_stderr(diff) ** 2))
    return EpsilonTerm(value, se, c.value, chi_c, da.capacity, db.capacity, cu)


@dataclass(frozen=True)
class ErrorBound:
    """Upper bound for the error term: two Green-product sums plus cap(A n B)."""

    first: float
    second: float
    cap_intersection: float
    cap_stderr: float
    indexing: str

    @property
    def value(self) -> float:
        return self.first + self.second + self.cap_intersection


def error_bound_terms(A: WalkSegment, B: WalkSegment, green: GreenTable | None = None,
                      cfg: EscapeConfig | None = None, stream: RngStream | None = None,
                      indexing: str = "time", tag: int = 7) -> ErrorBound:
    """Terms of ``sum G G + sum G G + cap(A n B)``.

    ``indexing="time"`` sums over every time index of the two segments,
    ``indexing="set"`` over distinct points.  The time form dominates the
    set form.  cap(A n B) is estimated with ``cfg`` (default 16 walks per
    point).
    """
    if indexing not in ("time", "set"):
        raise ValueError("indexing must be 'time' or 'set'")
    g = _green(A.dim, green)
    pa, va = occupation(A.points)
    pb, vb = occupation(B.points)
    if indexing == "set":
        va, vb = np.ones(len(pa)), np.ones(len(pb))
    FA, FB = pair_fields(pa, va, pb, vb, g)
    first = float((va * FA[:, 0] ** 2).sum())
    second = float((vb * FB[:, 0] ** 2).sum())
    inter = PointSet(A.dim, pa).intersection(PointSet(B.dim, pb))
    cfg = cfg if cfg is not None else EscapeConfig(replicates=16)
    cap = capacity(inter, cfg, stream, tag)
    return ErrorBound(first, second, cap.mean, cap.stderr, indexing)


def error_bound_rhs(A: WalkSegment, B: WalkSegment, green: GreenTable | None = None,
                    cfg: EscapeConfig | None = None, stream: RngStream | None = None) -> float:
    """Time-indexed error bound ``sum_{i,j1,j2} G G + sum_{i1,i2,j} G G + cap(A n B)``."""
    return error_bound_terms(A, B, green, cfg, stream, "time").value


@dataclass(frozen=True)
class AuxSandwich:
    """``chi(A, C) + chi(B, C) - chi(A u B, C)`` and the bound on it.

    ``bound = constant * (first + second)`` with ``first`` summing
    G(x - y) G(y - z) and ``second`` summing G(x - y) G(x - z) over
    x in A, y in B, z in C.
    """

    value: float
    stderr: float
    first: float
    second: float
    constant: float

    @property
    def bound(self) -> float:
        return self.constant * (self.first + self.second)


def aux_sandwich(A: WalkSegment, B: WalkSegment, C: WalkSegment, cfg: EscapeConfig,
                 stream: RngStream | None = None, green: GreenTable | None = None) -> AuxSandwich:
    """Subadditivity defect of the cross term in its first argument.

    A, B and A u B are decorated by one coupled run, so the defect is
    nonnegative walk by walk.  The constant ``1 + 1/G_D(0)`` covers the
    A n B term through ``1{x = y} <= G_D(x - y) / G_D(0)``.
    """
    g = _green(A.dim, green)
    sa, sb = PointSet(A.dim, A.points), PointSet(B.dim, B.points)
    su = sa.union(sb)
    res = family_escape(SetFamily.from_sets([sa, sb, su]), cfg, stream, tag=0)
    dc = decorate(C, cfg, stream, tag=1)
    rows_a, rows_b = res.family.member_rows(0), res.family.member_rows(1)
    ea, eb, eu = res.escape(0), res.escape(1), res.escape(2)
    # escape defect of every union point, weighted by its membership
    w = np.zeros(len(su))
    w[rows_a] += ea
    w[rows_b] += eb
    w -= eu
    FU, FC = pair_fields(su.points, w, dc.points, dc.escape, g)
    value = float(w @ FU[:, 0])
    # per-point defect variance from the coupled indicators, plus C's decoration
    diff = res.indicators(0).astype(np.int64) + res.indicators(1) - res.indicators(2)
    var_w = diff.var(axis=1, ddof=1) / diff.shape[1] if diff.shape[1] > 1 else diff[:, 0] ** 2
    var = float((FU[:, 0] ** 2 * var_w).sum() + (FC[:, 0] ** 2 * dc.escape_variance).sum())
    # Green-product sums over x in A, y in B, z in C
    one_a, one_b = np.ones(len(sa)), np.ones(len(sb))
    FA_B, _ = pair_fields(sb.points, one_b, sa.points, one_a, g)  # at y: sum_x G(x - y)
    FC_B, _ = pair_fields(sb.points, one_b, dc.points, np.ones(len(dc)), g)  # at y: sum_z G(y - z)
    FB_A, _ = pair_fields(sa.points, one_a, sb.points, one_b, g)  # at x: sum_y G(x - y)
    FC_A, _ = pair_fields(sa.points, one_a, dc.points, np.ones(len(dc)), g)  # at x: sum_z G(x - z)
    first = float((FA_B[:, 0] * FC_B[:, 0]).sum())
    second = float((FB_A[:, 0] * FC_A[:, 0]).sum())
    return AuxSandwich(value, float(np.sqrt(var)), first, second, 1.0 + 1.0 / g.at_origin())


# ------------------------------------------------------------ decomposition


@dataclass(frozen=True)
class DecompositionTerms:
    """Dyadic decomposition of the capacity of a range.

    ``caps[(l, j)]`` is the capacity of the j-th of 2^l pieces (exact
    rational, as escape counts over replicates), ``pair_chi[(l, j)]`` and
    ``pair_chi_C[(l, j)]`` the cross term and capacity deficit of the
    sibling pair (2j-1, 2j) at level l.  Aggregates are exact rationals
    built from these.
    """

    level: int
    caps: dict = field(repr=False)
    pair_chi: dict = field(repr=False)
    pair_chi_C: dict = field(repr=False)

    def lambda_C(self, l: int) -> Fraction:
        return sum((self.pair_chi_C[(l, j)] for j in range(1, 2 ** (l - 1) + 1)), Fraction(0))

    def lambda_(self, l: int) -> Fraction:
        return 2 * sum((Fraction(self.pair_chi[(l, j)]) for j in range(1, 2 ** (l - 1) + 1)),
                       Fraction(0))

    def pair_epsilon(self, l: int, j: int) -> Fraction:
        return 2 * Fraction(self.pair_chi[(l, j)]) - self.pair_chi_C[(l, j)]

    @property
    def epsilon_L(self) -> Fraction:
        return sum((self.pair_epsilon(l, j) for l in range(1, self.level + 1)
                    for j in range(1, 2 ** (l - 1) + 1)), Fraction(0))

    def leaf_capacity(self) -> Fraction:
        L = self.level
        return sum((self.caps[(L, j)] for j in range(1, 2**L + 1)), Fraction(0))

    def telescoping_residual(self) -> Fraction:
        """cap(S) - (sum_j cap(leaf j) - sum_l Lambda^C_l); zero by construction."""
        return self.caps[(0, 1)] - (self.leaf_capacity()
                                    - sum((self.lambda_C(l) for l in range(1, self.level + 1)), Fraction(0)))

    def epsilon_residual(self) -> Fraction:
        """eps_L - sum_l (Lambda_l - Lambda^C_l); zero by construction."""
        return self.epsilon_L - sum((self.lambda_(l) - self.lambda_C(l)
                                     for l in range(1, self.level + 1)), Fraction(0))

    def as_dict(self) -> dict:
        L = self.level
        return {
            "level": L,
            "cap": float(self.caps[(0, 1)]),
            "leaf_cap_sum": float(self.leaf_capacity()),
            "Lambda": [float(self.lambda_(l)) for l in range(1, L + 1)],
            "Lambda_C": [float(self.lambda_C(l)) for l in range(1, L + 1)],
            "epsilon_L": float(self.epsilon_L),
        }


def decomposition_terms(S: WalkSegment, L: int, cfg: EscapeConfig, stream: RngStream | None = None,
                        green: GreenTable | None = None,
                        decoration: BlockDecoration | None = None) -> DecompositionTerms:
    """All Lambda_l, Lambda^C_l (l = 1..L) and eps_L from one coupled run.

    The union of the sibling pieces (l, 2j-1) and (l, 2j) is the piece
    (l-1, j), so every capacity needed is that of a dyadic piece.
    """
    if not 1 <= L <= 5:
        raise ValueError("level must be between 1 and 5")
    if S.n_steps % (1 << L):
        raise ValueError(f"walk length {S.n_steps} not divisible by 2**{L}")
    counts = [1 << l for l in range(1, L + 1)]
    dec = decoration if decoration is not None else decorate_blocks(S, counts, cfg, stream)
    g = _green(S.dim, green)
    caps = {}
    for l in range(0, L + 1):
        for j, piece in enumerate(dec.blocks[1 << l] if l else [dec.whole], start=1):
            caps[(l, j)] = piece.exact_capacity
    pair_chi, pair_chi_C = {}, {}
    for l in range(1, L + 1):
        pieces = dec.blocks[1 << l]
        for j in range(1, 2 ** (l - 1) + 1):
            a, b = pieces[2 * j - 2], pieces[2 * j - 1]
            pair_chi[(l, j)] = chi(a, b, g).value
            pair_chi_C[(l, j)] = caps[(l, 2 * j - 1)] + caps[(l, 2 * j)] - caps[(l - 1, j)]
    return DecompositionTerms(L, caps, pair_chi, pair_chi_C)


# ---------------------------------------------------------- time-sum stats


def _dyadic_ranges(n: int, l: int) -> list[tuple[int, int]]:
    if n % (1 << l):
        raise ValueError(f"walk length {n} not divisible by 2**{l}")
    h = n >> l
    return [(h * (p - 1), h * p) for p in range(1, (1 << l) + 1)]


def _field(targets: np.ndarray, sources: np.ndarray, g: GreenTable) -> np.ndarray:
    """``sum_s G(t - s)`` over the rows of ``sources`` (with repetition), at each target."""
    pts, counts = occupation(sources)
    tp, inverse = np.unique(np.asarray(targets, dtype=np.int64), axis=0, return_inverse=True)
    FT, _ = pair_fields(tp, np.zeros(len(tp)), pts, counts, g)
    return FT[inverse.reshape(-1), 0]


def xyzw_stats(S: WalkSegment, S_tilde: WalkSegment, l: int,
               green: GreenTable | None = None) -> dict[str, float]:
    """The four triple time sums pairing sibling pieces at level l.

    With I_p the time interval of piece p (endpoints included):

    * X: sum_p sum_i sum_{j1 in I_{2p-1}} sum_{j2 in I_{2p}} G(S_i - T_j1) G(T_j1 - T_j2)
    * Y: same with G(S_i - T_j2) in place of G(S_i - T_j1)
    * Z, W: the roles of S and T = S_tilde exchanged.
    """
    if l < 1:
        raise ValueError("level must be at least 1")
    g = _green(S.dim, green)

    def one_side(U: WalkSegment, V: WalkSegment) -> tuple[float, float]:
        # sums where the sibling pieces are taken along V
        x = y = 0.0
        full_U = _field(V.points, U.points, g)  # at each time of V: sum over times of U
        ranges = _dyadic_ranges(V.n_steps, l)
        for p in range(len(ranges) // 2):
            a0, a1 = ranges[2 * p]
            b0, b1 = ranges[2 * p + 1]
            left = V.points[a0 : a1 + 1]
            right = V.points[b0 : b1 + 1]
            to_right = _field(left, right, g)  # at j1: sum_{j2} G(T_j1 - T_j2)
            to_left = _field(right, left, g)  # at j2: sum_{j1} G(T_j1 - T_j2)
            x += float((full_U[a0 : a1 + 1] * to_right).sum())
            y += float((full_U[b0 : b1 + 1] * to_left).sum())
        return x, y

    X, Y = one_side(S, S_tilde)
    Z, W = one_side(S_tilde, S)
    return {"X": X, "Y": Y, "Z": Z, "W": W}


def zn_stat(S: WalkSegment, S_tilde: WalkSegment, green: GreenTable | None = None) -> float:
    """``sum_{i,j} G_D(S_i - T_j)^2`` over all time indices, with the lattice G_D."""
    g = _green(S.dim, green)
    pa, va = occupation(S.points)
    pb, vb = occupation(S_tilde.points)
    FA, _ = pair_fields(pa, np.zeros(len(pa)), pb, vb, g, power=2)
    return float(va @ FA[:, 0])
