"""Desk-scale experiments on the fluctuations of capacities of walk ranges.

Every replicate of an experiment draws two independent walks ``S`` and
``S~`` of length n from its own stream ``RngStream(seed, n * 2**32 + rep)``,
so results do not depend on how replicates are spread over workers.

Monte Carlo noise in the estimated statistics is handled as follows:

* ``cap`` is the sum of per-point escape indicators averaged over a few
  walks per point.  Its variance over replicates is inflated by the escape
  noise ``sum_x e(x)(1 - e(x)) / r``; an unbiased estimate of that term is
  obtained from a Bernoulli subsample of the range with one extra walk per
  sampled point and subtracted.
* the cross term ``chi`` uses the full indicators on the first range and a
  Horvitz-Thompson subsample (weight 1/q) on the second; both are unbiased
  given the walks, and independent copies give unbiased higher moments.

The limits behind the scaling claims (n -> infinity, b_n -> infinity) are out
of reach here, so each claim is checked through an exponent fit or a
bounded-ratio surrogate.
"""
from __future__ import annotations

import ast
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import optimize

from .capacity import EscapeConfig, PointSet, capacity, escape_indicators
from .cross_term import (
    chi_localized,
    decomposition_terms,
    occupation,
    pair_fields,
)
from .green import get_green_table
from .lattice import RngStream, simulate_walk

STATISTICS = ("cap", "cap_upper", "cap_lower", "chi", "chi_b", "epsilon_L", "error_bound_rhs")
MIN_REPLICATES = 100
MAX_MOMENT = 4


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the key path."""


# ------------------------------------------------------------------ b_n rule

_ALLOWED_CALLS = {"log": math.log, "sqrt": math.sqrt}


def _check_expr(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check_expr(node.body)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Mult, ast.Div, ast.Pow)):
        _check_expr(node.left)
        _check_expr(node.right)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_CALLS
                and len(node.args) == 1 and not node.keywords):
            raise ValueError("only log(.) and sqrt(.) may be called")
        _check_expr(node.args[0])
    elif isinstance(node, ast.Name):
        if node.id != "n":
            raise ValueError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            raise ValueError("constants must be numbers")
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        _check_expr(node.operand)
    else:
        raise ValueError(f"unsupported syntax {type(node).__name__}")


@dataclass(frozen=True)
class DeviationScale:
    """Deviation scale b_n given as a product of constants, log n, sqrt(log n) and n^a.

    ``^`` is accepted for powers and ``log n`` for ``log(n)``.
    """

    expression: str
    _code: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        text = self.expression.replace("^", "**")
        text = re.sub(r"\blog\s+n\b", "log(n)", text)
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"cannot parse b_n expression {self.expression!r}") from exc
        _check_expr(tree)
        object.__setattr__(self, "_code", compile(tree, "<b_n>", "eval"))

    def __call__(self, n: float) -> float:
        value = eval(self._code, {"__builtins__": {}}, {"n": float(n), **_ALLOWED_CALLS})
        if not value > 0:
            raise ValueError(f"b_n = {value} at n = {n} is not positive")
        return float(value)


# -------------------------------------------------------------------- config


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a statistic sampled over an ascending grid of walk lengths.

    ``escape_walks`` walks per point estimate escape probabilities for cap,
    ``block_count`` is the b of ``chi_b`` and ``level`` the L of ``epsilon_L``.
    """

    dim: int
    n: tuple
    replicates: int
    seed: int
    b_n: str = "1"
    statistic: str = "cap"
    lambdas: tuple = (0.5, 1.0, 1.5)
    m_max: int = 2
    escape_walks: int = 1
    block_count: int = 2
    level: int = 2

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if self.dim not in (4, 5):
            raise ConfigError("config.dim: must be 4 or 5")
        if not self.n or any(v < 1 for v in self.n):
            raise ConfigError("config.n: must be a non-empty list of positive lengths")
        if any(b <= a for a, b in zip(self.n, self.n[1:])):
            raise ConfigError("config.n: grid must be strictly ascending")
        if self.replicates < MIN_REPLICATES:
            raise ConfigError(f"config.replicates: must be at least {MIN_REPLICATES}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("config.seed: must be an unsigned 64-bit integer")
        if self.statistic not in STATISTICS:
            raise ConfigError(f"config.statistic: must be one of {', '.join(STATISTICS)}")
        if not 1 <= self.m_max <= MAX_MOMENT:
            raise ConfigError(f"config.m_max: must lie in 1..{MAX_MOMENT}")
        if self.escape_walks < 1:
            raise ConfigError("config.escape_walks: must be positive")
        if any(lam < 0 for lam in self.lambdas):
            raise ConfigError("config.lambdas: must be nonnegative")
        try:
            DeviationScale(self.b_n)
        except ValueError as exc:
            raise ConfigError(f"config.b_n: {exc}") from None
        if self.statistic == "chi_b" and any(v % self.block_count for v in self.n):
            raise ConfigError("config.block_count: must divide every n")
        if self.statistic == "epsilon_L" and any(v % (1 << self.level) for v in self.n):
            raise ConfigError("config.level: 2**level must divide every n")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: must be a JSON object")
        known = set(cls.__dataclass_fields__)
        for key in data:
            if key not in known:
                raise ConfigError(f"config.{key}: unknown key")
        for key in ("dim", "n", "replicates", "seed"):
            if key not in data:
                raise ConfigError(f"config.{key}: required key missing")
        ints = ("dim", "replicates", "seed", "m_max", "escape_walks", "block_count", "level")
        for key in ints:
            if key in data and (not isinstance(data[key], int) or isinstance(data[key], bool)):
                raise ConfigError(f"config.{key}: must be an integer")
        for key in ("n", "lambdas"):
            if key in data:
                if not isinstance(data[key], list):
                    raise ConfigError(f"config.{key}: must be a list")
                for i, v in enumerate(data[key]):
                    if not isinstance(v, (int, float)) or isinstance(v, bool):
                        raise ConfigError(f"config.{key}[{i}]: must be a number")
                    if key == "n" and not float(v).is_integer():
                        raise ConfigError(f"config.{key}[{i}]: must be an integer")
        for key in ("b_n", "statistic"):
            if key in data and not isinstance(data[key], str):
                raise ConfigError(f"config.{key}: must be a string")
        return cls(**data)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n"] = list(self.n)
        d["lambdas"] = list(self.lambdas)
        return d

    def scale(self, n: int) -> float:
        return DeviationScale(self.b_n)(n)


# ---------------------------------------------------------------- replicates


def replicate_stream(seed: int, n: int, rep: int) -> RngStream:
    """Stream of replicate ``rep`` at walk length ``n``."""
    return RngStream(seed, (int(n) << 32) + int(rep))


@dataclass(frozen=True)
class ReplicatePlan:
    """Which statistics one replicate computes, and at what Monte Carlo cost.

    ``chi_copies`` independent estimates of the cross term are produced (the
    product of m copies is unbiased for chi^m).  ``sample_fraction`` is the
    Bernoulli rate of the Horvitz-Thompson subsamples used by the cross term,
    the Green sums and the error bound; ``noise_fraction`` that of the
    noise-correction subsample.  ``green_sum`` requests the double Green sum
    over time indices.
    """

    cap: bool = True
    chi_copies: int = 0
    error_bound: bool = False
    green_sum: bool = False
    escape_walks: int = 1
    sample_fraction: float = 0.125
    noise_fraction: float = 0.125
    intersection_walks: int = 16

    def __post_init__(self):
        if not (0 < self.sample_fraction <= 1 and 0 < self.noise_fraction <= 1):
            raise ValueError("sampling fractions must lie in (0, 1]")
        if self.chi_copies < 0 or self.escape_walks < 1:
            raise ValueError("invalid replicate plan")


def _ht_weights(mask: np.ndarray, P: PointSet, q: float, stream: RngStream, tag: int) -> np.ndarray:
    """Horvitz-Thompson escape weights: I(x)/q on the sampled rows, 0 elsewhere."""
    chosen = np.flatnonzero(mask)
    w = np.zeros(len(P))
    if len(chosen):
        ind, _ = escape_indicators(P, EscapeConfig(replicates=1), stream, tag, P.points[chosen])
        w[chosen] = ind[:, 0] / q
    return w


def replicate_statistics(dim: int, n: int, seed: int, rep: int, plan: ReplicatePlan,
                         green=None) -> dict:
    """All statistics of one replicate, as a dict of floats.

    Keys: ``cap``, ``cap_noise`` (unbiased estimate of the escape-noise
    variance of ``cap``), ``chi_0 .. chi_{k-1}``, ``green_sum``
    (``sum_{i,j} G_D(S_i - S~_j)`` over time indices) and, with
    ``error_bound``, ``ebr_first``, ``ebr_second``, ``ebr_cap`` and ``ebr``.

    Pair sums are estimated from two passes: all of the first range against a
    subsample of the second (cross terms, second error-bound sum) and a
    subsample of the first against all of the second (first error-bound sum,
    Green sum).  Every estimate is unbiased given the walks.
    """
    stream = replicate_stream(seed, n, rep)
    S = simulate_walk(dim, n, stream, 0)
    T = simulate_walk(dim, n, stream, 1)
    rng = stream.generator(2)
    pa, va = occupation(S.points)
    A = PointSet(dim, pa)
    out = {}
    ea = None
    if plan.cap or plan.chi_copies > 0:
        ind, _ = escape_indicators(A, EscapeConfig(replicates=plan.escape_walks), stream, 0)
        ea = ind.mean(axis=1)
        out["cap"] = float(ea.sum())
        sub = np.flatnonzero(rng.random(len(pa)) < plan.noise_fraction)
        noise = 0.0
        if len(sub):
            fresh, _ = escape_indicators(A, EscapeConfig(replicates=1), stream, 1, pa[sub])
            noise = float((ea[sub] * (1 - fresh[:, 0])).sum()) / plan.noise_fraction
        out["cap_noise"] = noise / plan.escape_walks
    if plan.chi_copies == 0 and not (plan.error_bound or plan.green_sum):
        return out
    g = green if green is not None else get_green_table(dim)
    pb, vb = occupation(T.points)
    B = PointSet(dim, pb)
    q = plan.sample_fraction
    va, vb = va.astype(float), vb.astype(float)
    copies = plan.chi_copies
    if copies or plan.error_bound:
        masks = [rng.random(len(pb)) < q for _ in range(max(copies, 1))]
        wa = [ea] + [_ht_weights(rng.random(len(pa)) < q, A, q, stream, 3 + 2 * k)
                     for k in range(1, copies)]
        wb = [_ht_weights(masks[k], B, q, stream, 2 + 2 * k) for k in range(copies)]
        rows = np.flatnonzero(np.logical_or.reduce(masks))
        W = np.column_stack([w[rows] for w in wb] + [np.zeros(len(rows))])
        FP, FQ = pair_fields(pa, va, pb[rows], W, g)
        for k in range(copies):
            out[f"chi_{k}"] = float(wa[k] @ FP[:, k])
        if plan.error_bound:
            in0 = masks[0][rows]
            second = float((vb[rows][in0] * FQ[in0, 0] ** 2).sum()) / q
    if plan.error_bound or plan.green_sum:
        rows = np.flatnonzero(rng.random(len(pa)) < q)
        FP, _ = pair_fields(pa[rows], np.zeros(len(rows)), pb, vb, g)
        out["green_sum"] = float(va[rows] @ FP[:, 0]) / q
        if plan.error_bound:
            first = float((va[rows] * FP[:, 0] ** 2).sum()) / q
            inter = A.intersection(B)
            ci = capacity(inter, EscapeConfig(replicates=plan.intersection_walks), stream, 100).mean
            out.update(ebr_first=first, ebr_second=second, ebr_cap=float(ci), ebr=first + second + ci)
    return out


def _statistic_task(args) -> float:
    kind, dim, n, seed, rep, cfgd = args
    stream = replicate_stream(seed, n, rep)
    if kind == "chi_b":
        S = simulate_walk(dim, n, stream, 0)
        T = simulate_walk(dim, n, stream, 1)
        return chi_localized(S, T, cfgd["block_count"], EscapeConfig(replicates=cfgd["escape_walks"]),
                             stream).value
    if kind == "epsilon_L":
        S = simulate_walk(dim, n, stream, 0)
        return float(decomposition_terms(S, cfgd["level"],
                                         EscapeConfig(replicates=cfgd["escape_walks"]), stream).epsilon_L)
    raise ValueError(kind)


def _plan_task(args) -> dict:
    dim, n, seed, rep, plan = args
    return replicate_statistics(dim, n, seed, rep, plan)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _map(fn, tasks: list, workers: int | None) -> list:
    """Ordered map over tasks, in-process for one worker."""
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def run_replicates(dim: int, n: int, seed: int, replicates: int, plan: ReplicatePlan,
                   workers: int | None = None, start: int = 0) -> dict[str, np.ndarray]:
    """Replicates ``start .. start + replicates - 1`` at length n, stacked per key."""
    tasks = [(dim, n, seed, rep, plan) for rep in range(start, start + replicates)]
    rows = _map(_plan_task, tasks, workers)
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}


# --------------------------------------------------------------------- fits


@dataclass(frozen=True)
class Fit:
    """A fitted exponent (or ratio) with a 95% confidence interval."""

    name: str
    exponent: float
    stderr: float
    ci: tuple
    intercept: float = 0.0

    def as_dict(self) -> dict:
        return {"name": self.name, "exponent": self.exponent, "stderr": self.stderr,
                "ci": list(self.ci), "intercept": self.intercept}


def fit_power_law(name: str, x, y, se) -> Fit:
    """Weighted least squares of log y on log x; the slope is the exponent.

    Weights are 1/(se/y)^2, the delta-method variances of log y.
    """
    x, y, se = (np.asarray(v, dtype=float) for v in (x, y, se))
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("power-law fits need positive data")
    X = np.column_stack([np.ones_like(x), np.log(x)])
    sl = np.maximum(se / y, 1e-300)
    Wt = 1.0 / sl**2
    cov = np.linalg.inv(X.T @ (X * Wt[:, None]))
    beta = cov @ (X.T @ (Wt * np.log(y)))
    s = float(np.sqrt(cov[1, 1]))
    b = float(beta[1])
    return Fit(name, b, s, (b - 1.96 * s, b + 1.96 * s), float(beta[0]))


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0


def corrected_variance(cap: np.ndarray, noise: np.ndarray) -> tuple[float, float]:
    """Variance of the capacity with the escape noise removed, and its stderr.

    ``Var(cap_hat) - mean(noise_hat)``; the stderr comes from the
    per-replicate terms ``(cap - mean)^2 - noise``.
    """
    cap = np.asarray(cap, dtype=float)
    R = len(cap)
    dev = (cap - cap.mean()) ** 2 * R / (R - 1)
    u = dev - noise
    return float(u.mean()), float(u.std(ddof=1) / np.sqrt(R))


# ------------------------------------------------------------- moment tables


@dataclass(frozen=True)
class MomentRow:
    n: int
    m: int
    mean: float
    stderr: float


@dataclass(frozen=True)
class MomentTable:
    """Per-(n, m) moment estimates with fitted growth exponents.

    ``extras`` holds per-n derived quantities (for the capacity: the
    corrected variance, the ratio Var/(n log n) and E[cap]/n).
    """

    statistic: str
    ns: tuple
    rows: tuple
    fits: tuple
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(r.m > MAX_MOMENT for r in self.rows):
            raise ValueError(f"moments above order {MAX_MOMENT} are not estimated")

    def moment(self, n: int, m: int) -> MomentRow:
        for r in self.rows:
            if r.n == n and r.m == m:
                return r
        raise KeyError((n, m))

    def fit(self, name: str) -> Fit:
        for f in self.fits:
            if f.name == name:
                return f
        raise KeyError(name)

    def per_n(self) -> list[dict]:
        out = []
        for n in self.ns:
            rows = sorted((r for r in self.rows if r.n == n), key=lambda r: r.m)
            first = next(r for r in rows if r.m == 1)
            d = {"n": n, "mean": first.mean, "stderr": first.stderr,
                 "moments": [{"m": r.m, "mean": r.mean, "stderr": r.stderr} for r in rows]}
            d.update(self.extras.get(n, {}))
            out.append(d)
        return out


def _ratio_drift(name: str, table: dict, key: str, lo: int, hi: int) -> Fit:
    a, sa = table[lo][key], table[lo][key + "_stderr"]
    b, sb = table[hi][key], table[hi][key + "_stderr"]
    r = b / a - 1.0
    s = abs(b / a) * math.hypot(sa / a, sb / b)
    return Fit(name, r, s, (r - 1.96 * s, r + 1.96 * s))


def cap_moment_table(ns, samples: dict, m_max: int = 2) -> MomentTable:
    """Moment table of the capacity from per-n sample dicts (keys ``cap``, ``cap_noise``).

    The second moment is noise-corrected; higher raw moments of the noisy
    estimate are not reported.
    """
    m_max = min(m_max, 2)
    rows, extras = [], {}
    for n in ns:
        cap, noise = samples[n]["cap"], samples[n]["cap_noise"]
        mu, se = _mean_se(cap)
        var, vse = corrected_variance(cap, noise)
        rows.append(MomentRow(n, 1, mu, se))
        if m_max >= 2:
            m2, s2 = _mean_se(cap**2 - noise)
            rows.append(MomentRow(n, 2, m2, s2))
        nl = n * math.log(n)
        extras[n] = {"variance": var, "variance_stderr": vse,
                     "var_ratio": var / nl, "var_ratio_stderr": vse / nl,
                     "cap_per_n": mu / n, "cap_per_n_stderr": se / n}
    fits = []
    ns = tuple(ns)
    if len(ns) >= 2:
        fits.append(fit_power_law("cap_mean_exponent", ns, [extras[n]["cap_per_n"] * n for n in ns],
                                  [extras[n]["cap_per_n_stderr"] * n for n in ns]))
        fits.append(_ratio_drift("cap_per_n_drift_top_octave", extras, "cap_per_n", ns[-2], ns[-1]))
        ratios = np.array([extras[n]["var_ratio"] for n in ns])
        rse = np.array([extras[n]["var_ratio_stderr"] for n in ns])
        w = 1.0 / np.maximum(rse, 1e-300) ** 2
        sig = float((w * ratios).sum() / w.sum())
        sse = float(1.0 / np.sqrt(w.sum()))
        fits.append(Fit("sigma2", sig, sse, (sig - 1.96 * sse, sig + 1.96 * sse)))
    if len(ns) >= 3:
        fits.append(_ratio_drift("var_ratio_drift_top_two_octaves", extras, "var_ratio", ns[-3], ns[-1]))
    return MomentTable("cap", ns, tuple(rows), tuple(fits), extras)


def chi_moment_table(ns, samples: dict, m_max: int) -> MomentTable:
    """Moment table of the cross term from independent copies ``chi_0 .. chi_{m-1}``."""
    rows, extras = [], {}
    for n in ns:
        copies = [samples[n][f"chi_{k}"] for k in range(m_max)]
        for m in range(1, m_max + 1):
            mu, se = _mean_se(np.prod(copies[:m], axis=0))
            rows.append(MomentRow(n, m, mu, se))
        if m_max >= 2:
            m1 = next(r.mean for r in rows if r.n == n and r.m == 1)
            m2 = next(r.mean for r in rows if r.n == n and r.m == 2)
            extras[n] = {"second_moment_ratio": m2 / m1**2}
    fits = []
    if len(ns) >= 2:
        for m in range(1, m_max + 1):
            sel = [r for r in rows if r.m == m]
            if all(r.mean > 0 for r in sel):
                fits.append(fit_power_law(f"chi_moment_{m}_exponent", ns, [r.mean for r in sel],
                                          [max(r.stderr, 1e-12 * r.mean) for r in sel]))
    return MomentTable("chi", tuple(ns), tuple(rows), tuple(fits), extras)


def estimate_cap_moments(cfg: ExperimentConfig, workers: int | None = None) -> MomentTable:
    """E[cap] and the noise-corrected Var[cap] per n, with the fit Var ~ sigma^2 n log n."""
    plan = ReplicatePlan(cap=True, escape_walks=cfg.escape_walks)
    samples = {n: run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers) for n in cfg.n}
    return cap_moment_table(cfg.n, samples, cfg.m_max)


def estimate_chi_moments(cfg: ExperimentConfig, m_max: int | None = None,
                         workers: int | None = None) -> MomentTable:
    """E[chi^m] per n from m independent copies, with fitted n-exponents (target m/2)."""
    m_max = cfg.m_max if m_max is None else m_max
    if not 1 <= m_max <= MAX_MOMENT:
        raise ValueError(f"m_max must lie in 1..{MAX_MOMENT}")
    plan = ReplicatePlan(cap=False, chi_copies=m_max, escape_walks=cfg.escape_walks)
    samples = {n: run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers) for n in cfg.n}
    return chi_moment_table(cfg.n, samples, m_max)


# -------------------------------------------------------------------- tails


@dataclass(frozen=True)
class TailRow:
    n: int
    lam: float
    threshold: float
    count: int
    replicates: int
    frequency: float
    rate: float | None  # -(1/b_n) log frequency, reported when count >= 10

    def __post_init__(self):
        if not 0 <= self.count <= self.replicates:
            raise ValueError("exceedance count out of range")


@dataclass(frozen=True)
class TailReport:
    """Exceedance counts at thresholds lambda * sqrt(n b_n^3) or lambda * sqrt(n b_n log n)."""

    statistic: str
    b_n: str
    rows: tuple

    def as_list(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def tail_threshold(statistic: str, n: int, b: float, lam: float) -> float:
    """Deviation threshold: capacity deviations on the sqrt(n b_n log n) scale, cross terms on sqrt(n b_n^3)."""
    if statistic in ("cap", "cap_upper", "cap_lower"):
        return lam * math.sqrt(n * b * math.log(n))
    return lam * math.sqrt(n * b**3)


def tail_rows(statistic: str, n: int, values: np.ndarray, b: float, lambdas) -> list[TailRow]:
    """Exceedances of one sample; capacities are centred at their sample mean."""
    values = np.asarray(values, dtype=float)
    R = len(values)
    if statistic in ("cap", "cap_upper", "cap_lower"):
        dev = values - values.mean()
        dev = -dev if statistic == "cap_lower" else dev
    else:
        dev = values
    out = []
    for lam in lambdas:
        thr = tail_threshold(statistic, n, b, lam)
        count = int((dev >= thr).sum())
        freq = count / R
        rate = -math.log(freq) / b if count >= 10 else None
        out.append(TailRow(n, float(lam), thr, count, R, freq, rate))
    return out


def statistic_samples(cfg: ExperimentConfig, n: int, workers: int | None = None) -> np.ndarray:
    """Per-replicate values of ``cfg.statistic`` at length n."""
    s = cfg.statistic
    if s in ("chi_b", "epsilon_L"):
        extra = {"block_count": cfg.block_count, "level": cfg.level, "escape_walks": cfg.escape_walks}
        tasks = [(s, cfg.dim, n, cfg.seed, rep, extra) for rep in range(cfg.replicates)]
        return np.array(_map(_statistic_task, tasks, workers))
    if s == "chi":
        plan = ReplicatePlan(cap=False, chi_copies=1, escape_walks=cfg.escape_walks)
        return run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers)["chi_0"]
    if s == "error_bound_rhs":
        plan = ReplicatePlan(cap=False, error_bound=True)
        return run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers)["ebr"]
    plan = ReplicatePlan(cap=True, escape_walks=cfg.escape_walks)
    return run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers)["cap"]


def tail_probability(cfg: ExperimentConfig, workers: int | None = None) -> TailReport:
    """Exceedance counts of ``cfg.statistic`` at every n and lambda of the config."""
    rows = []
    for n in cfg.n:
        rows += tail_rows(cfg.statistic, n, statistic_samples(cfg, n, workers), cfg.scale(n), cfg.lambdas)
    return TailReport(cfg.statistic, cfg.b_n, tuple(rows))


# ---------------------------------------------------------------- experiments


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Moments, fits and exceedances of ``cfg.statistic``; the results JSON body.

    Wall-clock time is deliberately left out so that identical seeds give
    identical results; callers record it in their run manifest.
    """
    s = cfg.statistic
    per_n, fits, tails = [], [], []
    if s in ("cap", "cap_upper", "cap_lower"):
        plan = ReplicatePlan(cap=True, escape_walks=cfg.escape_walks)
        samples = {n: run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers) for n in cfg.n}
        table = cap_moment_table(cfg.n, samples, cfg.m_max)
        values = {n: samples[n]["cap"] for n in cfg.n}
    elif s == "chi":
        plan = ReplicatePlan(cap=False, chi_copies=cfg.m_max, escape_walks=cfg.escape_walks)
        samples = {n: run_replicates(cfg.dim, n, cfg.seed, cfg.replicates, plan, workers) for n in cfg.n}
        table = chi_moment_table(cfg.n, samples, cfg.m_max)
        values = {n: samples[n]["chi_0"] for n in cfg.n}
    else:
        values = {n: statistic_samples(cfg, n, workers) for n in cfg.n}
        rows = []
        for n in cfg.n:
            v = values[n]
            for m in range(1, cfg.m_max + 1):
                mu, se = _mean_se(v**m)
                rows.append(MomentRow(n, m, mu, se))
        fl = []
        if len(cfg.n) >= 2 and all(r.mean > 0 for r in rows if r.m == 1):
            sel = [r for r in rows if r.m == 1]
            fl.append(fit_power_law(f"{s}_exponent", cfg.n, [r.mean for r in sel],
                                    [max(r.stderr, 1e-12 * r.mean) for r in sel]))
            if s == "error_bound_rhs":
                fl.append(fit_power_law("error_bound_rhs_loglog_exponent", np.log(cfg.n),
                                        [r.mean for r in sel], [max(r.stderr, 1e-12 * r.mean) for r in sel]))
        table = MomentTable(s, cfg.n, tuple(rows), tuple(fl))
    per_n = table.per_n()
    fits = [f.as_dict() for f in table.fits]
    for n in cfg.n:
        tails += [asdict(r) for r in tail_rows(s, n, values[n], cfg.scale(n), cfg.lambdas)]
    return {"config": cfg.as_dict(), "statistic": s, "per_n": per_n, "fits": fits, "exceedances": tails}


def results_csv_rows(results: dict) -> list[tuple]:
    """CSV mirror of a results dict: (n, statistic, value, stderr) per moment."""
    rows = []
    for d in results["per_n"]:
        for mom in d["moments"]:
            name = results["statistic"] if mom["m"] == 1 else f"{results['statistic']}^{mom['m']}"
            rows.append((d["n"], name, mom["mean"], mom["stderr"]))
    return rows


# ----------------------------------------------------------- scaling suite


@dataclass(frozen=True)
class ScalingReport:
    """Joint scaling run: cross-term exponent, variance drift and error-bound growth."""

    ns: tuple
    replicates: int
    cap: MomentTable
    chi: MomentTable
    ebr: MomentTable
    chi_exponent: Fit
    var_drift: Fit
    ebr_loglog_exponent: Fit

    def as_dict(self) -> dict:
        return {
            "ns": list(self.ns), "replicates": self.replicates,
            "cap": self.cap.per_n(), "chi": self.chi.per_n(), "error_bound_rhs": self.ebr.per_n(),
            "fits": [self.chi_exponent.as_dict(), self.var_drift.as_dict(),
                     self.ebr_loglog_exponent.as_dict()],
        }


def scaling_suite(dim: int = 5, ns=tuple(2**k for k in range(8, 14)), replicates: int = 2000,
                  seed: int = 2024, workers: int | None = None, progress=None) -> ScalingReport:
    """One pass per replicate yields cap, chi and the error bound together.

    Fits: the n-exponent of E[chi] (target 1/2), the drift of Var[cap]/(n log n)
    over the top two octaves, and the exponent of E[error_bound_rhs] against
    log n (target 3).
    """
    # the pair passes dominate at large n; a sparser subsample keeps the grid within an hour
    plan = ReplicatePlan(cap=True, chi_copies=1, error_bound=True, sample_fraction=1 / 16)
    ns = tuple(int(n) for n in ns)
    samples = {}
    for n in ns:
        samples[n] = run_replicates(dim, n, seed, replicates, plan, workers)
        if progress is not None:
            progress(n)
    cap = cap_moment_table(ns, samples, 2)
    chi_t = chi_moment_table(ns, samples, 1)
    rows = []
    for n in ns:
        mu, se = _mean_se(samples[n]["ebr"])
        rows.append(MomentRow(n, 1, mu, se))
    ebr_fit = fit_power_law("error_bound_rhs_loglog_exponent", np.log(ns), [r.mean for r in rows],
                            [r.stderr for r in rows])
    ebr = MomentTable("error_bound_rhs", ns, tuple(rows), (ebr_fit,))
    return ScalingReport(ns, replicates, cap, chi_t, ebr, chi_t.fit("chi_moment_1_exponent"),
                         cap.fit("var_ratio_drift_top_two_octaves"), ebr_fit)


# -------------------------------------------------------------- gamma tilde


def _pack(points: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
    key = np.zeros(len(points), dtype=np.int64)
    for k in range(points.shape[1]):
        key = key * span[k] + (points[:, k] - lo[k])
    return key


def _first_times(keys: np.ndarray, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    u, idx = np.unique(keys, return_index=True)
    return u, idx + offset


def three_walk_horizon(dim: int, horizon: int, stream: RngStream) -> int:
    """First horizon T at which the three-walk non-intersection event fails.

    The event at horizon T is: the first walk does not return to 0 during
    [1, T], and the third walk during [1, T] avoids both the first and
    second walks during [0, T].  Returns ``horizon + 1`` if it survives to
    the end, so the event holds at T iff T < returned value.
    """
    W = [simulate_walk(dim, horizon, stream, k).points for k in range(3)]
    allp = np.concatenate(W)
    lo = allp.min(axis=0)
    span = allp.max(axis=0) - lo + 1
    if float(np.prod(span.astype(float))) >= 2.0**62:
        raise ValueError("walks too spread out to pack their coordinates")
    k1, k2, k3 = (_pack(w, lo, span) for w in W)
    tau = horizon + 1
    origin = _pack(np.zeros((1, dim), dtype=np.int64), lo, span)[0]
    back = np.flatnonzero(k1[1:] == origin)
    if len(back):
        tau = int(back[0]) + 1
    u1, t1 = _first_times(k1)
    u2, t2 = _first_times(k2)
    keys = np.concatenate([u1, u2])
    times = np.concatenate([t1, t2])
    order = np.lexsort((times, keys))
    keys, times = keys[order], times[order]
    first = np.ones(len(keys), dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    u12, t12 = keys[first], times[first]
    u3, t3 = _first_times(k3[1:], 1)
    _, i12, i3 = np.intersect1d(u12, u3, assume_unique=True, return_indices=True)
    if len(i12):
        tau = min(tau, int(np.maximum(t12[i12], t3[i3]).min()))
    return tau


def _gamma_task(args) -> int:
    dim, horizon, seed, rep = args
    return three_walk_horizon(dim, horizon, RngStream(seed, rep))


@dataclass(frozen=True)
class GammaTildeEstimate:
    """Finite-horizon estimates of the three-walk non-intersection probability and their extrapolation.

    ``value``/``stderr`` come from the fit c0 + c1 T^(-1/2); ``alternative``
    is c0 from c0 + c1/T, reported as model sensitivity.  ``monotone`` is
    False if the finite-horizon estimates ever increase with T.
    """

    value: float
    stderr: float
    ci: tuple
    alternative: float
    alternative_stderr: float
    horizons: tuple
    probabilities: tuple
    stderrs: tuple
    monotone: bool
    replicates: int

    def as_dict(self) -> dict:
        d = asdict(self)
        d["ci"], d["horizons"] = list(self.ci), list(self.horizons)
        d["probabilities"], d["stderrs"] = list(self.probabilities), list(self.stderrs)
        return d


def _intercept_functional(horizons: np.ndarray, power: float, se: np.ndarray) -> np.ndarray:
    """Row vector a with c0 = a . p for the weighted fit p(T) = c0 + c1 T^(-power)."""
    X = np.column_stack([np.ones(len(horizons)), horizons ** (-power)])
    w = 1.0 / np.maximum(se, 1e-12) ** 2
    M = np.linalg.inv(X.T @ (X * w[:, None])) @ (X.T * w)
    return M[0]


def estimate_gamma_tilde(horizons=(64, 128, 256, 512, 1024, 2048), replicates: int = 20000,
                         seed: int = 5, dim: int = 5, workers: int | None = None) -> GammaTildeEstimate:
    """Monte Carlo estimate of the three-walk non-intersection probability.

    One triple of walks of the longest horizon serves every T, so the
    finite-horizon estimates are nested.  The intercept of each fit is a
    fixed linear combination of the indicators, so its stderr is the
    sample stderr of that combination across replicates.
    """
    if dim != 5:
        raise ValueError("the three-walk probability is only positive and estimated in d = 5")
    horizons = np.array(sorted(int(t) for t in horizons), dtype=float)
    if len(horizons) < 2:
        raise ValueError("at least two horizons are needed to extrapolate")
    tasks = [(dim, int(horizons[-1]), seed, rep) for rep in range(replicates)]
    tau = np.array(_map(_gamma_task, tasks, workers))
    ind = (tau[:, None] > horizons[None, :]).astype(float)
    p = ind.mean(axis=0)
    se = ind.std(axis=0, ddof=1) / np.sqrt(replicates)
    out = []
    for power in (0.5, 1.0):
        a = _intercept_functional(horizons, power, se)
        vals = ind @ a
        out.append((float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(replicates))))
    (c0, s0), (c1, s1) = out
    monotone = bool(np.all(np.diff(p) <= 0))
    return GammaTildeEstimate(c0, s0, (c0 - 1.96 * s0, c0 + 1.96 * s0), c1, s1, tuple(horizons.astype(int).tolist()),
                              tuple(p.tolist()), tuple(se.tolist()), monotone, replicates)


def chi_constant_check(gamma: float, n: int = 4096, replicates: int = 200, seed: int = 11,
                       dim: int = 5, workers: int | None = None) -> dict:
    """Compare E[chi]/sqrt(n) with gamma^2 E[n^(-1/2) sum_{i,j} G_D(S_i - S~_j)].

    The double Green sum over time indices is the discrete proxy for
    5^(5/2) times the Brownian double integral of the Green function.
    """
    plan = ReplicatePlan(cap=False, chi_copies=1, green_sum=True)
    s = run_replicates(dim, n, seed, replicates, plan, workers)
    chi_mean, chi_se = _mean_se(s["chi_0"] / math.sqrt(n))
    proxy, proxy_se = _mean_se(s["green_sum"] / math.sqrt(n))
    pred = gamma**2 * proxy
    return {"n": n, "replicates": replicates, "chi_scaled": chi_mean, "chi_scaled_stderr": chi_se,
            "green_proxy": proxy, "green_proxy_stderr": proxy_se, "predicted": pred,
            "ratio": chi_mean / pred}


# ---------------------------------------------------------- closed forms


def rate_functions(lam: float, kappa: float, gamma: float = 1.0, dim: int = 5) -> float:
    """Deviation rate functions: I_5 = 1/2 (5^(-5/2) gamma^-2 kappa^-4 lam)^(2/3), I_4 = 2 pi^-4 kappa^-4 lam.

    ``kappa`` is the Gagliardo-Nirenberg constant, supplied by the caller;
    ``gamma`` (the three-walk probability) enters only in d = 5.
    """
    if not (lam > 0 and kappa > 0):
        raise ValueError("lambda and kappa must be positive")
    if dim == 5:
        if not 0 < gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        return 0.5 * (5.0**-2.5 * gamma**-2 * kappa**-4 * lam) ** (2.0 / 3.0)
    if dim == 4:
        return 2.0 * math.pi**-4 * kappa**-4 * lam
    raise ValueError("rate functions are defined for d = 4 and 5")


@dataclass(frozen=True)
class OptimizationCheck:
    name: str
    numeric: float
    closed_form: float
    argmax: float

    @property
    def relative_error(self) -> float:
        if self.closed_form == 0:
            return abs(self.numeric)
        return abs(self.numeric / self.closed_form - 1.0)


def _golden_max(f, scale: float) -> tuple[float, float]:
    """Maximise a unimodal f over (0, inf) by golden-section search in log coordinates around ``scale``."""
    g = lambda u: -f(scale * math.exp(u))  # noqa: E731
    u, fval, calls = optimize.golden(g, brack=(-1.0, 1.0), tol=1e-12, full_output=True)
    if not np.isfinite(fval) or calls >= 5000:
        raise RuntimeError("golden-section search did not converge")
    return -float(fval), scale * math.exp(u)


def optimization_identities(theta: float = 1.0, kappa: float = 1.0, C: float = 1.0,
                            lam: float = 1.0) -> tuple[OptimizationCheck, OptimizationCheck]:
    """Numerical maxima of the two scalar optimisation problems versus their closed forms.

    (a) sup_t theta kappa^2 t^(3/4) - t/10 = (27 5^3 / 32) theta^4 kappa^8;
    (b) sup_th th lam^(1/2) - C th^4 = 3 4^(-4/3) lam^(2/3) C^(-1/3).
    The search scale of each problem is set by balancing its two terms.
    """
    if min(theta, kappa, C, lam) <= 0:
        raise ValueError("inputs must be positive")
    a = theta * kappa**2
    fa = lambda t: a * t**0.75 - t / 10.0  # noqa: E731
    va, ta = _golden_max(fa, (10.0 * a) ** 4)
    ca = 27 * 5**3 / 32 * theta**4 * kappa**8
    fb = lambda th: th * math.sqrt(lam) - C * th**4  # noqa: E731
    vb, tb = _golden_max(fb, (math.sqrt(lam) / C) ** (1.0 / 3.0))
    cb = 3 * 4 ** (-4.0 / 3.0) * lam ** (2.0 / 3.0) * C ** (-1.0 / 3.0)
    return (OptimizationCheck("time_legendre", va, ca, ta),
            OptimizationCheck("theta_legendre", vb, cb, tb))


@lru_cache(maxsize=None)
def _composition_sums(parts: int, m: int) -> tuple:
    """Sums over compositions of j into ``parts`` nonnegative parts of prod m_i!, for j = 0..m."""
    fact = [math.factorial(j) for j in range(m + 1)]
    cur = list(fact)
    for _ in range(parts - 1):
        cur = [sum(fact[a] * cur[j - a] for a in range(j + 1)) for j in range(m + 1)]
    return tuple(cur)


@dataclass(frozen=True)
class CombinatorialFactor:
    """m! times the sum over compositions of m into 2^(l-1) parts of prod m_i!, and its bound.

    ``bound`` is 2^l (m!)^2 e^(2^l/m) to 60 significant digits;
    ``concentration`` is the value over (parts * (m!)^2), the share of the
    simplex vertices (it tends to 1 when m is large against the number of
    parts).
    """

    l: int
    m: int
    value: int
    bound: Decimal
    holds: bool
    ratio_to_bound: float
    concentration: float


def combinatorial_factor(l: int, m: int) -> CombinatorialFactor:
    """Exact composition sum of the interval-refinement count and its exponential bound."""
    if not (1 <= l <= 6 and 1 <= m <= 30):
        raise ValueError("exact evaluation is budgeted to 1 <= l <= 6 and 1 <= m <= 30")
    parts = 2 ** (l - 1)
    mf = math.factorial(m)
    value = mf * _composition_sums(parts, m)[m]
    with localcontext() as ctx:
        ctx.prec = 60
        bound = Decimal(2**l * mf * mf) * (Decimal(2**l) / Decimal(m)).exp()
        holds = Decimal(value) <= bound
        ratio = float(Decimal(value) / bound)
    return CombinatorialFactor(l, m, value, bound, bool(holds), ratio,
                               float(Fraction(value, parts * mf * mf)))
