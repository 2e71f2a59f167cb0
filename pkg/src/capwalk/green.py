"""Lattice Green's function of simple random walk and related kernels.

The Fourier integral

    G_D(x) = (2 pi)^-d  int cos(k.x) / (1 - phi(k)) dk,   phi(k) = (1/d) sum cos k_i

is evaluated through its heat-kernel form.  Writing 1/(1 - phi) as a time
integral separates the k-integral into modified Bessel functions,

    G_D(x) = d int_0^inf  prod_i e^-s I_{|x_i|}(s)  ds,

which has no singularity to subtract.  In the variable v = log s the
integrand is analytic and decays doubly exponentially at -inf and like
e^{-(d/2 - 1) v} at +inf, so the trapezoid rule converges geometrically.

Values are stored once per orbit of the hyperoctahedral group, indexed by
the fundamental domain ``R >= x_1 >= ... >= x_d >= 0``.
"""
from __future__ import annotations

import itertools
import math
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import gamma as gamma_fn
from scipy.special import ive

_MAGIC = b"GRN1"
_HEADER = struct.Struct("<4sBId")
_ASYMPTOTIC_SWITCH = 1e8  # scipy's ive returns nan beyond ~2e9
_V_RANGE = (-40.0, 80.0)


def continuous_green_constant(dim: int) -> float:
    """Coefficient of |x|^{2-d} in the Brownian Green's function."""
    return gamma_fn(dim / 2 - 1) / (2 * np.pi ** (dim / 2))


def lattice_tail_constant(dim: int) -> float:
    """Coefficient c_d in G_D(x) ~ c_d |x|^{2-d}, equal to d times the Brownian one."""
    return dim * continuous_green_constant(dim)


def eval_continuous_green(dim: int, x) -> float:
    """Green's function of standard Brownian motion in R^d.

    For d = 5 this is ``|x|^-3 / (4 pi^2)``.
    """
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if r == 0.0:
        raise ValueError("the continuous Green's function is singular at 0")
    return continuous_green_constant(dim) * r ** (2 - dim)


# ---------------------------------------------------------------- quadrature


def _bessel_nodes(kmax: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid weights in v = log s and the table e^-s I_k(s), k <= kmax."""
    v = np.arange(_V_RANGE[0], _V_RANGE[1] + h / 2, h)
    s = np.exp(v)
    k = np.arange(kmax + 1, dtype=float)[:, None]
    table = np.empty((kmax + 1, s.size))
    small = s <= _ASYMPTOTIC_SWITCH
    table[:, small] = ive(k, s[small])
    # Hankel expansion; five terms are exact to rounding for s >= 1e8, k <= 200
    sl = s[~small][None, :]
    mu = 4.0 * k * k
    term = np.ones((kmax + 1, sl.shape[1]))
    total = term.copy()
    for j in range(1, 6):
        term = -term * (mu - (2 * j - 1) ** 2) / (j * 8.0 * sl)
        total += term
    table[:, ~small] = total / np.sqrt(2 * np.pi * sl)
    return h * s, np.ascontiguousarray(table)


@njit(cache=True)
def _quadrature_kernel(coords, weights, table, dim):
    out = np.empty(coords.shape[0])
    nodes = weights.shape[0]
    for e in range(coords.shape[0]):
        acc = 0.0
        for j in range(nodes):
            p = weights[j]
            for c in range(dim):
                p *= table[coords[e, c], j]
            acc += p
        out[e] = dim * acc
    return out


def green_quadrature(points, dim: int, h: float = 0.1) -> np.ndarray:
    """G_D at arbitrary lattice points by direct quadrature (no table)."""
    pts = np.abs(np.atleast_2d(np.asarray(points, dtype=np.int64)))
    if pts.shape[1] != dim:
        raise ValueError("points have the wrong dimension")
    weights, table = _bessel_nodes(int(pts.max(initial=0)), h)
    return _quadrature_kernel(pts, weights, table, dim)


# ---------------------------------------------------------- orbit indexing


def binomial_table(radius: int, dim: int) -> np.ndarray:
    n = radius + dim + 1
    out = np.zeros((n, dim + 2), dtype=np.int64)
    for a in range(n):
        for b in range(dim + 2):
            out[a, b] = math.comb(a, b)
    return out


def domain_size(dim: int, radius: int) -> int:
    return math.comb(radius + dim, dim)


def fundamental_domain(dim: int, radius: int) -> np.ndarray:
    """Orbit representatives ``R >= x_1 >= ... >= x_d >= 0`` in lexicographic order."""
    reps = np.array(
        [c[::-1] for c in itertools.combinations_with_replacement(range(radius + 1), dim)],
        dtype=np.int64,
    ).reshape(-1, dim)
    order = np.lexsort(reps.T[::-1])
    return reps[order]


@njit(cache=True)
def _rank_sorted(sorted_desc, binom, dim):
    # lexicographic rank of a non-increasing tuple among all such tuples
    r = 0
    for i in range(dim):
        r += binom[sorted_desc[i] + dim - 1 - i, dim - i]
    return r


@njit(cache=True, inline="always")
def green_from_abs(values, binom, radius, tail, dim, buf):
    """G_D at a displacement given by its absolute coordinates in ``buf``.

    ``buf`` (int64, length ``dim``) is sorted in place.
    """
    r2 = 0.0
    mx = 0
    for c in range(dim):
        a = buf[c]
        r2 += a * a
        if a > mx:
            mx = a
    if mx > radius:
        if dim == 5:
            return tail / (r2 * np.sqrt(r2))
        if dim == 4:
            return tail / r2
        if dim == 3:
            return tail / np.sqrt(r2)
        return tail * r2 ** (1.0 - 0.5 * dim)
    # insertion sort, descending
    for i in range(1, dim):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key
    return values[_rank_sorted(buf, binom, dim)]


@njit(cache=True)
def green_lookup(values, binom, radius, tail, dim, dx):
    """G_D at displacement ``dx`` (int array of length ``dim``)."""
    buf = np.empty(dim, dtype=np.int64)
    for c in range(dim):
        buf[c] = abs(dx[c])
    return green_from_abs(values, binom, radius, tail, dim, buf)


@njit(cache=True)
def _lookup_many(values, binom, radius, tail, dim, pts):
    out = np.empty(pts.shape[0])
    for e in range(pts.shape[0]):
        out[e] = green_lookup(values, binom, radius, tail, dim, pts[e])
    return out


@njit(cache=True)
def _harmonic_kernel(values, binom, radius, tail, dim, reps):
    # reps are orbit representatives with x_1 <= radius - 1
    worst = 0.0
    y = np.empty(dim, dtype=np.int64)
    for e in range(reps.shape[0]):
        for c in range(dim):
            y[c] = reps[e, c]
        g = green_lookup(values, binom, radius, tail, dim, y)
        acc = 0.0
        for c in range(dim):
            y[c] += 1
            acc += green_lookup(values, binom, radius, tail, dim, y)
            y[c] -= 2
            acc += green_lookup(values, binom, radius, tail, dim, y)
            y[c] += 1
        delta = 1.0 if reps[e, 0] == 0 else 0.0
        res = abs(g - delta - acc / (2 * dim))
        if res > worst:
            worst = res
    return worst


# ------------------------------------------------------------------ tables


@dataclass(frozen=True)
class GreenTable:
    """G_D on the box ``|x|_inf <= radius`` plus the asymptotic tail.

    ``values[k]`` is G_D at the k-th orbit representative of
    :func:`fundamental_domain`.  Beyond the box, ``tail_constant * |x|^{2-d}``.
    """

    dim: int
    radius: int
    values: np.ndarray = field(repr=False)
    tail_constant: float
    quadrature_error: float = 0.0
    binom: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.shape != (domain_size(self.dim, self.radius),):
            raise ValueError("value array does not match the fundamental domain")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "binom", binomial_table(self.radius, self.dim))

    @property
    def kernel_args(self) -> tuple:
        """Arguments ``(values, binom, radius, tail, dim)`` for :func:`green_lookup`."""
        return self.values, self.binom, self.radius, float(self.tail_constant), self.dim

    def __call__(self, x) -> float:
        return eval_green(self, x)

    def many(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.int64)
        return _lookup_many(*self.kernel_args, pts)

    def at_origin(self) -> float:
        return float(self.values[0])

    def harmonic_residual(self) -> float:
        """Max over ``|x|_inf < R`` of |G(x) - 1{x=0} - mean of G over neighbours|."""
        reps = fundamental_domain(self.dim, self.radius - 1)
        return float(_harmonic_kernel(*self.kernel_args, reps))

    def seam_mismatch(self) -> float:
        """Max relative gap between table and asymptotic law on the shell |x|_inf = R."""
        reps = fundamental_domain(self.dim, self.radius)
        shell = reps[reps[:, 0] == self.radius]
        g = self.many(shell)
        r = np.sqrt((shell.astype(float) ** 2).sum(axis=1))
        asym = lattice_tail_constant(self.dim) * r ** (2.0 - self.dim)
        return float(np.max(np.abs(g - asym) / g))


def eval_green(table: GreenTable, x) -> float:
    """G_D(x): table value inside the box, asymptotic law outside."""
    dx = np.asarray(getattr(x, "coords", x), dtype=np.int64)
    if dx.shape != (table.dim,):
        raise ValueError(f"point of dimension {dx.size} for a {table.dim}-dimensional table")
    return float(green_lookup(*table.kernel_args, dx))


def fit_tail_constant(dim: int, radius: int, values: np.ndarray) -> float:
    """Fit c in G ~ c|x|^{2-d} + c'|x|^{-d} on the boundary shell and return c."""
    reps = fundamental_domain(dim, radius)
    shell = reps[:, 0] == radius
    r = np.sqrt((reps[shell].astype(float) ** 2).sum(axis=1))
    y = values[shell] * r ** (dim - 2)
    design = np.column_stack([np.ones_like(r), r**-2.0])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(coef[0])


def build_green_table(dim: int, radius: int, h: float = 0.1, tol: float = 1e-12) -> GreenTable:
    """Build G_D on ``|x|_inf <= radius``.

    The quadrature is run at steps ``h`` and ``2h``; if the two disagree by
    more than ``tol`` (absolute) a ``RuntimeError`` reports the gap.  For
    d = 5 the tail uses the exact asymptotic constant 5/(4 pi^2); otherwise it
    is fitted on the boundary shell.
    """
    if dim not in (3, 4, 5):
        raise ValueError("dim must be 3, 4 or 5")
    if radius < 1:
        raise ValueError("radius must be at least 1")
    reps = fundamental_domain(dim, radius)
    w, t = _bessel_nodes(radius, h)
    values = _quadrature_kernel(reps, w, t, dim)
    w2, t2 = _bessel_nodes(radius, 2 * h)
    coarse = _quadrature_kernel(reps, np.ascontiguousarray(w2), t2, dim)
    err = float(np.max(np.abs(values - coarse)))
    if err > tol:
        raise RuntimeError(f"Green quadrature did not converge: step-halving gap {err:.3e}")
    tail = lattice_tail_constant(5) if dim == 5 else fit_tail_constant(dim, radius, values)
    return GreenTable(dim, radius, values, tail, err)


def save_green_table(table: GreenTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, table.dim, table.radius, table.tail_constant))
        fh.write(table.values.astype("<f8").tobytes())


def load_green_table(path) -> GreenTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, dim, radius, tail = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a Green table (magic {magic!r})")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return GreenTable(dim, radius, values, tail)


def cache_dir() -> Path:
    root = os.environ.get("CAPWALK_CACHE") or Path.home() / ".cache" / "capwalk"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


DEFAULT_RADIUS = {3: 48, 4: 48, 5: 32}


@lru_cache(maxsize=8)
def get_green_table(dim: int, radius: int | None = None) -> GreenTable:
    """Cached table, built on first use and stored under :func:`cache_dir`."""
    radius = DEFAULT_RADIUS[dim] if radius is None else radius
    path = cache_dir() / f"green_d{dim}_R{radius}.grn"
    if path.exists():
        return load_green_table(path)
    table = build_green_table(dim, radius)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    save_green_table(table, tmp)
    os.replace(tmp, path)
    return table


# ------------------------------------------------------- square-root kernel


@dataclass(frozen=True)
class SqrtGreenTable:
    """Convolution square root of G_D.

    ``values`` lives on a periodic grid of side ``period = 4 * half_width``;
    lookups are meaningful for ``|x|_inf <= half_width``.
    """

    dim: int
    half_width: int
    values: np.ndarray = field(repr=False)

    @property
    def period(self) -> int:
        return self.values.shape[0]

    def __call__(self, x) -> float:
        coords = getattr(x, "coords", x)
        if max(abs(int(c)) for c in coords) > self.half_width:
            raise ValueError("point outside the grid half-width")
        return float(self.values[tuple(int(c) % self.period for c in coords)])

    def self_convolution(self) -> np.ndarray:
        """Circular self-convolution on the torus, the periodized G_D."""
        f = np.fft.rfftn(self.values)
        return np.fft.irfftn(f * f, s=self.values.shape, axes=tuple(range(self.values.ndim)))


def _symbol(dim: int, width: int) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(width)
    cos = np.cos(k)
    phi = np.zeros((width,) * dim)
    for c in range(dim):
        shape = [1] * dim
        shape[c] = width
        phi = phi + cos.reshape(shape)
    return 1.0 - phi / dim


def build_sqrt_green(dim: int, half_width: int) -> SqrtGreenTable:
    """Inverse DFT of (1 - phi(k))^{-1/2} sampled on a torus of side 4W.

    The k = 0 sample is singular and is the one free parameter of the
    periodic approximation; it is chosen so that the self-convolution equals
    G_D(0).  What remains is the periodization error: the images of the
    source and the uniform background that compensates the removed zero mode.
    Relative to G_D(x) both are of order (|x| / P)^(d-2) with P = 4W, so
    at fixed x the error decays like W^(2-d).  On ``|x|_inf <= W/4`` it
    stays below 0.3% for d = 3 and 0.05% for d = 5.
    """
    if half_width < 2 or half_width & (half_width - 1):
        raise ValueError("half_width must be a power of two, at least 2")
    period = 4 * half_width
    sym = _symbol(dim, period)
    sym.flat[0] = 1.0
    inv = 1.0 / sym
    inv.flat[0] = 0.0
    g0 = float(green_quadrature(np.zeros((1, dim), dtype=np.int64), dim)[0])
    zero_mode = period**dim * g0 - inv.sum()
    del inv
    if zero_mode <= 0:
        raise RuntimeError("torus too small to match G_D(0)")
    root = sym ** -0.5
    del sym
    root.flat[0] = np.sqrt(zero_mode)
    vals = np.fft.fftn(root).real / root.size  # the symbol is real and even
    return SqrtGreenTable(dim, half_width, np.ascontiguousarray(vals))
