"""Graph bookkeeping for mixed moments of inverse walk distances.

A graph with vertices in Z^d and weighted edges stands for the product
``prod |x - y|_+^{-w(x, y)}``.  The expectation of such a product over one
walk vertex, with everything else conditioned on, is bounded by a local
rewrite of the graph times a deterministic time-gap factor.  Removing the
walk vertices one at a time, latest first, leaves an edgeless graph and a
product of gap factors; the ordered list of rewrites is a certificate that
can be serialized and replayed.

Two families of graphs are handled:

* ``cross``: ``m`` black edges ``S~[j_k] - S[i_k]`` of weight 3.  Rewrites
  emit ``|gap|_+^{-3/4}`` and create red edges of weight 3/2.
* ``error``: ``2m`` black edges ``S~[j_k] - S[i_phi(k)]`` for a two-to-one
  map ``phi``.  Each ``S`` vertex carries two edge slots coloured red and
  blue; rewrites emit ``|gap|_+^{-1}`` and create coloured edges of weight 1.

The multiplicative constant of every rewrite is kept symbolic: a
certificate with ``k`` steps carries ``C^k``.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve

ORIGIN = "0"
BLACK, RED, BLUE = "black", "red", "blue"
ALLOWED_WEIGHTS = frozenset({Fraction(3), Fraction(3, 2), Fraction(1), Fraction(1, 2)})
KIND_WEIGHTS = {
    "cross": frozenset({Fraction(3), Fraction(3, 2)}),
    "error": frozenset({Fraction(3), Fraction(1)}),
}
KIND_EXPONENT = {"cross": Fraction(3, 4), "error": Fraction(1)}

CROSS_RULES = ("cross-c1", "cross-c2", "cross-c3", "cross-c4", "cross-c5")
PAIR_RULES = ("pair-c1", "pair-c2", "pair-c3", "pair-c4")
PATH_RULES = ("path-c1", "path-c2", "path-c3")
RULES = CROSS_RULES + PAIR_RULES + PATH_RULES


class PatternMismatch(ValueError):
    """A rewrite was requested where its left-hand pattern does not match."""


class StuckState(RuntimeError):
    """No rewrite applies to the scheduled pivot."""


def _opposite(color: str) -> str:
    return BLUE if color == RED else RED


# ---------------------------------------------------------------------------
# graph representation


@dataclass(frozen=True)
class Vertex:
    """A vertex of a reduction graph.

    ``kind`` is ``origin``, ``walk`` or ``fixed``.  Walk vertices carry the
    walk label (``S`` or ``S~``), a time symbol and their rank in the time
    order of their walk (1 = earliest).  ``slots`` lists the colours of the
    edge slots of an ``S`` vertex in an error graph.
    """

    name: str
    kind: str
    walk: str | None = None
    time: str = ORIGIN
    rank: int = 0
    color: str | None = None
    slots: tuple[str, ...] = ()


@dataclass(frozen=True)
class Edge:
    """Weighted edge; ``slot`` is the colour of the ``S``-end slot of a black edge."""

    u: str
    v: str
    weight: Fraction
    color: str = BLACK
    slot: str | None = None

    def other(self, name: str) -> str:
        return self.v if self.u == name else self.u

    def touches(self, name: str) -> bool:
        return self.u == name or self.v == name


@dataclass(frozen=True)
class ReductionGraph:
    """Vertices and a multiset of weighted edges.

    ``phi`` is the two-to-one map of an error graph, ``order`` lists the
    indices ``k`` of the ``S[i_k]`` vertices from earliest to latest time.
    """

    kind: str
    m: int
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    phi: tuple[int, ...] | None = None
    order: tuple[int, ...] = ()

    def vertex(self, name: str) -> Vertex:
        for v in self.vertices:
            if v.name == name:
                return v
        raise KeyError(name)

    def incident(self, name: str) -> list[Edge]:
        return [e for e in self.edges if e.touches(name)]

    def degree(self, name: str) -> int:
        return len(self.incident(name))

    def max_degree(self) -> int:
        return max((self.degree(v.name) for v in self.vertices), default=0)

    def total_weight(self) -> Fraction:
        return sum((e.weight for e in self.edges), Fraction(0))

    def weights(self) -> set[Fraction]:
        return {e.weight for e in self.edges}

    def has_self_loop(self) -> bool:
        return any(e.u == e.v for e in self.edges)

    def walk_vertices(self, walk: str) -> list[Vertex]:
        return sorted((v for v in self.vertices if v.walk == walk), key=lambda v: v.rank)

    def base_of(self, name: str) -> Vertex:
        """The conditioning anchor: previous vertex in time on the same walk, else the origin."""
        piv = self.vertex(name)
        earlier = [v for v in self.walk_vertices(piv.walk) if v.rank < piv.rank]
        return earlier[-1] if earlier else self.vertex(ORIGIN)

    def is_edgeless(self) -> bool:
        return not self.edges


def _s(k: int) -> str:
    return f"S[i{k}]"


def _t(k: int) -> str:
    return f"S~[j{k}]"


def build_cross_graph(m: int, order=None) -> ReductionGraph:
    """Graph of ``prod_k |S_{i_k} - S~_{j_k}|_+^{-3}`` with ``j`` sorted.

    ``order`` gives the time order of the ``i`` indices (earliest first);
    the default is ``i_1 <= ... <= i_m``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    order = tuple(range(1, m + 1)) if order is None else tuple(int(k) for k in order)
    if sorted(order) != list(range(1, m + 1)):
        raise ValueError(f"order must be a permutation of 1..{m}")
    rank = {k: r + 1 for r, k in enumerate(order)}
    verts = [Vertex(ORIGIN, "origin")]
    verts += [Vertex(_s(k), "walk", "S", f"i{k}", rank[k]) for k in range(1, m + 1)]
    verts += [Vertex(_t(k), "walk", "S~", f"j{k}", k) for k in range(1, m + 1)]
    edges = [Edge(_t(k), _s(k), Fraction(3)) for k in range(1, m + 1)]
    return ReductionGraph("cross", m, tuple(verts), tuple(edges), None, order)


def check_two_to_one(phi, m: int) -> tuple[int, ...]:
    phi = tuple(int(p) for p in phi)
    if len(phi) != 2 * m or Counter(phi) != Counter({k: 2 for k in range(1, m + 1)}):
        raise ValueError(f"phi={phi} is not a two-to-one map onto 1..{m}")
    return phi


def build_error_graph(m: int, phi) -> ReductionGraph:
    """Graph of ``prod_k |S_{i_phi(k)} - S~_{j_k}|_+^{-3}`` for sorted ``j`` and ``i``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    phi = check_two_to_one(phi, m)
    verts = [Vertex(ORIGIN, "origin")]
    verts += [Vertex(_s(k), "walk", "S", f"i{k}", k) for k in range(1, m + 1)]
    verts += [Vertex(_t(k), "walk", "S~", f"j{k}", k) for k in range(1, 2 * m + 1)]
    edges = [Edge(_t(k), _s(phi[k - 1]), Fraction(3)) for k in range(1, 2 * m + 1)]
    return ReductionGraph("error", m, tuple(verts), tuple(edges), phi, tuple(range(1, m + 1)))


def slot_colors(phi) -> list[str]:
    """Colour of the slot used by occurrence ``k`` of ``phi``, scanned right to left.

    The last occurrence is blue, the one before it red.  Further first
    occurrences take red; repeated occurrences take the opposite colour of
    the earlier-seen one.
    """
    n = len(phi)
    colors = [""] * n
    seen: dict[int, str] = {}
    for k in range(n - 1, -1, -1):
        v = phi[k]
        if v in seen:
            c = _opposite(seen[v])
        elif k == n - 1:
            c = BLUE
        else:
            c = RED
        colors[k] = c
        seen[v] = c
    return colors


def color_vertices(graph: ReductionGraph, phi=None) -> ReductionGraph:
    """Assign red/blue slot colours to the black edges of an error graph."""
    if graph.kind != "error":
        raise ValueError("only error graphs are coloured")
    phi = graph.phi if phi is None else check_two_to_one(phi, graph.m)
    colors = slot_colors(phi)
    edges = []
    for e in graph.edges:
        k = int(e.u[len("S~[j"):-1])
        edges.append(replace(e, slot=colors[k - 1]))
    slots: dict[str, list[str]] = {}
    for k, c in enumerate(colors, start=1):
        slots.setdefault(_s(phi[k - 1]), []).append(c)
    verts = tuple(replace(v, slots=tuple(slots[v.name])) if v.name in slots else v for v in graph.vertices)
    return replace(graph, vertices=verts, edges=tuple(edges), phi=phi)


def is_colored(graph: ReductionGraph) -> bool:
    return all(e.slot is not None for e in graph.edges if e.color == BLACK)


# ---------------------------------------------------------------------------
# rewrites


@dataclass(frozen=True)
class ReductionStep:
    """One applied rewrite with its emitted factor ``|a - b|_+^{-exponent}``."""

    rule: str
    pivot: str
    gap: tuple[str, str]
    exponent: Fraction
    removed_weight: Fraction

    def as_dict(self) -> dict:
        return {
            "rule": self.rule,
            "pivot": self.pivot,
            "factor": {"gap": list(self.gap), "exponent": str(self.exponent)},
        }


def _describe(edges: list[Edge], pivot: str) -> str:
    parts = []
    for e in edges:
        tag = e.color if e.slot is None else f"{e.color}/{e.slot}"
        parts.append(f"{e.other(pivot)}:{e.weight}:{tag}")
    return "{" + ", ".join(sorted(parts)) + "}"


def match_rule(graph: ReductionGraph, pivot: str) -> str | None:
    """The rewrite whose left-hand pattern matches at ``pivot``, if any."""
    inc = graph.incident(pivot)
    piv = graph.vertex(pivot)
    bare = graph.degree(graph.base_of(pivot).name) == 0
    black = [e for e in inc if e.color == BLACK]
    if graph.kind == "cross":
        red = [e for e in inc if e.color == RED and e.weight == Fraction(3, 2)]
        if len(black) + len(red) != len(inc) or any(e.weight != 3 for e in black):
            return None
        if len(black) == 1 and not red:
            return "cross-c1"
        if len(black) == 1 and len(red) == 1:
            return "cross-c3" if bare else "cross-c2"
        if not black and len(red) == 2:
            return "cross-c4"
        if not black and len(red) == 1:
            return "cross-c5"
        return None
    colored = Counter(e.color for e in inc if e.color != BLACK)
    if any(e.weight != 1 for e in inc if e.color != BLACK):
        return None
    if piv.walk == "S~":
        if len(black) != 1 or black[0].slot is None:
            return None
        c = black[0].slot
        same, opp = colored[c], colored[_opposite(c)]
        if same + opp + 1 != len(inc):
            return None
        if same == 0 and opp == 0:
            return "pair-c1"
        if same == 0 and opp == 1:
            return "pair-c2"
        if same == 1 and opp == 1:
            return "pair-c4" if bare else "pair-c3"
        return None
    if black:
        return None
    pair = sorted((colored[RED], colored[BLUE]))
    if pair == [2, 2]:
        return "path-c1"
    if pair == [1, 2]:
        return "path-c2"
    if pair == [1, 1]:
        return "path-c3"
    return None


def _rewrite(graph: ReductionGraph, rule: str, pivot: str, base: str) -> list[Edge]:
    """New edges replacing the pivot's neighbourhood."""
    inc = graph.incident(pivot)
    half, one = Fraction(3, 2), Fraction(1)
    if rule in CROSS_RULES:
        y = [e.other(pivot) for e in inc if e.color == BLACK]
        z = [e.other(pivot) for e in inc if e.color == RED]
        if rule == "cross-c1":
            return [Edge(base, y[0], half, RED)]
        if rule in ("cross-c2", "cross-c3"):
            return [Edge(base, y[0], half, RED), Edge(y[0], z[0], half, RED)]
        if rule == "cross-c4":
            return [Edge(z[0], z[1], half, RED)]
        return []
    if rule in PAIR_RULES:
        blk = next(e for e in inc if e.color == BLACK)
        c, y = blk.slot, blk.other(pivot)
        new = [Edge(base, y, one, c)]
        for e in inc:
            if e.color == c:
                new.append(Edge(y, e.other(pivot), one, c))
            elif e.color == _opposite(c):
                new.append(Edge(base, e.other(pivot), one, e.color))
        return new
    new = []
    for c in (RED, BLUE):
        ends = [e.other(pivot) for e in inc if e.color == c]
        if len(ends) == 2:
            new.append(Edge(ends[0], ends[1], one, c))
    return new


def apply_reduction(graph: ReductionGraph, rule: str, pivot: str) -> tuple[ReductionGraph, ReductionStep]:
    """Integrate out ``pivot`` with the rewrite ``rule``.

    The conditioning anchor is the previous vertex of the pivot's walk (or
    the origin); the emitted factor is the time gap between the two.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    found = match_rule(graph, pivot)
    if found != rule:
        raise PatternMismatch(
            f"rule {rule} at {pivot}: pattern does not match, found neighbourhood "
            f"{_describe(graph.incident(pivot), pivot)} (matches {found})"
        )
    piv = graph.vertex(pivot)
    base = graph.base_of(pivot)
    new = _rewrite(graph, rule, pivot, base.name)
    for e in new:
        if e.u == e.v:
            raise PatternMismatch(f"rule {rule} at {pivot} would create a self-loop at {e.u}")
    kept = [e for e in graph.edges if not e.touches(pivot)]
    removed = sum((e.weight for e in graph.incident(pivot)), Fraction(0)) - sum((e.weight for e in new), Fraction(0))
    out = replace(
        graph,
        vertices=tuple(v for v in graph.vertices if v.name != pivot),
        edges=tuple(kept + new),
    )
    step = ReductionStep(rule, pivot, (piv.time, base.time), KIND_EXPONENT[graph.kind], removed)
    return out, step


# ---------------------------------------------------------------------------
# certificates


@dataclass
class ReductionCertificate:
    """Ordered rewrites from ``initial`` down to an edgeless ``residual``."""

    initial: ReductionGraph
    steps: list[ReductionStep]
    residual: ReductionGraph
    max_degree: int = 0

    @property
    def kind(self) -> str:
        return self.initial.kind

    @property
    def m(self) -> int:
        return self.initial.m

    @property
    def residual_ok(self) -> bool:
        return self.residual.is_edgeless()

    @property
    def constant_power(self) -> int:
        """Exponent ``k`` of the symbolic constant ``C^k``."""
        return len(self.steps)

    def factors(self) -> list[tuple[tuple[str, str], Fraction]]:
        return [(s.gap, s.exponent) for s in self.steps]

    def removed_weight(self) -> Fraction:
        return sum((s.removed_weight for s in self.steps), Fraction(0))

    def symbolic_bound(self) -> str:
        terms = [f"|{a}-{b}|_+^(-{e})" for (a, b), e in self.factors()]
        return f"C^{self.constant_power} * " + " * ".join(terms)

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "kind": self.kind,
            "phi": list(self.initial.phi) if self.initial.phi is not None else None,
            "order": list(self.initial.order),
            "steps": [s.as_dict() for s in self.steps],
            "residual_ok": self.residual_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def schedule(graph: ReductionGraph) -> list[str]:
    """Pivots in reduction order: ``S~`` latest first, then ``S`` latest first."""
    return [v.name for v in reversed(graph.walk_vertices("S~"))] + [
        v.name for v in reversed(graph.walk_vertices("S"))
    ]


def check_state(graph: ReductionGraph, initial_weight: Fraction, removed: Fraction) -> None:
    """Invariants that hold in every reachable state."""
    if graph.has_self_loop():
        raise AssertionError("self-loop created")
    if not graph.weights() <= KIND_WEIGHTS[graph.kind]:
        raise AssertionError(f"weights {sorted(graph.weights())} outside {sorted(KIND_WEIGHTS[graph.kind])}")
    if any(e.weight != 3 for e in graph.edges if e.color == BLACK):
        raise AssertionError("black edge with weight other than 3")
    if removed + graph.total_weight() != initial_weight:
        raise AssertionError("edge weight not conserved")


def colored_paths(graph: ReductionGraph) -> dict[str, list[str]]:
    """Red and blue edges as vertex sequences starting at the origin.

    Raises if either colour class is not a simple path from the origin
    through every ``S`` vertex.
    """
    out = {}
    s_names = {v.name for v in graph.walk_vertices("S")}
    for c in (RED, BLUE):
        es = [e for e in graph.edges if e.color == c]
        path, cur, used = [ORIGIN], ORIGIN, set()
        while True:
            nxt = [i for i, e in enumerate(es) if i not in used and e.touches(cur)]
            if not nxt:
                break
            if len(nxt) > 1:
                raise AssertionError(f"{c} edges branch at {cur}")
            used.add(nxt[0])
            cur = es[nxt[0]].other(cur)
            path.append(cur)
        if len(used) != len(es) or set(path[1:]) != s_names or len(path) != len(s_names) + 1:
            raise AssertionError(f"{c} edges do not form a path from the origin through every S vertex")
        out[c] = path
    return out


def reduce_to_certificate(graph: ReductionGraph) -> ReductionCertificate:
    """Reduce a cross or error graph to an edgeless one, checking invariants."""
    if graph.kind == "error" and not is_colored(graph):
        graph = color_vertices(graph)
    initial = graph
    w0 = graph.total_weight()
    removed = Fraction(0)
    steps = []
    max_deg = graph.max_degree()
    n_tilde = len(graph.walk_vertices("S~"))
    for idx, pivot in enumerate(schedule(graph)):
        rule = match_rule(graph, pivot)
        if rule is None:
            raise StuckState(
                f"no rule applies at {pivot}: neighbourhood {_describe(graph.incident(pivot), pivot)}"
            )
        graph, step = apply_reduction(graph, rule, pivot)
        removed += step.removed_weight
        steps.append(step)
        check_state(graph, w0, removed)
        max_deg = max(max_deg, graph.max_degree())
        if initial.kind == "error" and idx == n_tilde - 1:
            colored_paths(graph)
    if not graph.is_edgeless():
        raise StuckState("reduction ended with edges left")
    return ReductionCertificate(initial, steps, graph, max_deg)


def _initial_from(data: dict) -> ReductionGraph:
    if data["kind"] == "cross":
        return build_cross_graph(int(data["m"]), data.get("order") or None)
    if data["kind"] == "error":
        return color_vertices(build_error_graph(int(data["m"]), data["phi"]))
    raise ValueError(f"unknown graph kind {data['kind']!r}")


def replay(certificate) -> ReductionCertificate:
    """Re-apply the recorded rewrites from the initial graph.

    Accepts a certificate, its dict form or its JSON text.  Raises if any
    step fails to match or its factor differs from the recorded one.
    """
    if isinstance(certificate, ReductionCertificate):
        certificate = certificate.as_dict()
    elif isinstance(certificate, str):
        certificate = json.loads(certificate)
    graph = _initial_from(certificate)
    initial = graph
    w0 = graph.total_weight()
    removed = Fraction(0)
    steps = []
    max_deg = graph.max_degree()
    for rec in certificate["steps"]:
        graph, step = apply_reduction(graph, rec["rule"], rec["pivot"])
        got = step.as_dict()["factor"]
        if got != rec["factor"]:
            raise AssertionError(f"step at {rec['pivot']}: factor {got} differs from recorded {rec['factor']}")
        removed += step.removed_weight
        check_state(graph, w0, removed)
        steps.append(step)
        max_deg = max(max_deg, graph.max_degree())
    cert = ReductionCertificate(initial, steps, graph, max_deg)
    if cert.residual_ok != bool(certificate["residual_ok"]):
        raise AssertionError("replayed residual disagrees with the recorded one")
    return cert


def expected_factors(graph: ReductionGraph) -> Counter:
    """Closed-form gap product for a built graph.

    Cross: consecutive gaps of the sorted ``j`` and of the time-ordered
    ``i``, each with exponent 3/4.  Error: consecutive gaps of ``j_1..j_2m``
    and of ``i_1..i_m``, each with exponent 1.
    """
    e = KIND_EXPONENT[graph.kind]
    out = Counter()
    for walk in ("S~", "S"):
        prev = ORIGIN
        for v in graph.walk_vertices(walk):
            out[((v.time, prev), e)] += 1
            prev = v.time
    return out


def bound_matches_closed_form(cert: ReductionCertificate) -> bool:
    return Counter(cert.factors()) == expected_factors(cert.initial)


# ---------------------------------------------------------------------------
# enumeration


def two_to_one_maps(m: int) -> list[tuple[int, ...]]:
    """All arrangements of the multiset ``{1, 1, 2, 2, ..., m, m}``, sorted."""
    base = [k for k in range(1, m + 1) for _ in range(2)]
    return sorted(set(itertools.permutations(base)))


@dataclass
class EnumerationReport:
    m: int
    error_cases: int
    cross_cases: int
    certified: int
    failures: list[dict] = field(default_factory=list)
    max_degree: int = 0
    closed_form_ok: bool = True

    @property
    def ok(self) -> bool:
        return not self.failures and self.closed_form_ok

    def as_dict(self) -> dict:
        return {
            "m": self.m,
            "error_cases": self.error_cases,
            "cross_cases": self.cross_cases,
            "certified": self.certified,
            "max_degree": self.max_degree,
            "closed_form_ok": self.closed_form_ok,
            "failures": self.failures,
        }


def _certify_one(graph: ReductionGraph, label: dict, report: EnumerationReport) -> None:
    trace: list[dict] = []
    try:
        cert = reduce_to_certificate(graph)
        trace = [s.as_dict() for s in cert.steps]
        again = replay(cert.to_json())
        if again.factors() != cert.factors() or not again.residual_ok:
            raise AssertionError("replay differs")
        if not bound_matches_closed_form(cert):
            report.closed_form_ok = False
            raise AssertionError(f"bound {cert.symbolic_bound()} differs from the closed form")
    except (AssertionError, StuckState, PatternMismatch) as exc:
        report.failures.append({**label, "error": str(exc), "trace": trace})
        return
    report.certified += 1
    report.max_degree = max(report.max_degree, cert.max_degree)


def enumerate_and_certify(m: int) -> EnumerationReport:
    """Certify every error graph (all two-to-one maps) and every cross ordering."""
    if not 1 <= m <= 4:
        raise ValueError("m must be between 1 and 4")
    phis = two_to_one_maps(m)
    orders = list(itertools.permutations(range(1, m + 1)))
    report = EnumerationReport(m, len(phis), len(orders), 0)
    for phi in phis:
        _certify_one(build_error_graph(m, phi), {"kind": "error", "phi": list(phi)}, report)
    for order in orders:
        _certify_one(build_cross_graph(m, order), {"kind": "cross", "order": list(order)}, report)
    return report


# ---------------------------------------------------------------------------
# summation of gap products


def _chains(factors) -> list[list[Fraction]]:
    """Split gap factors into chains ``0 -> t_1 -> t_2 -> ...`` per walk."""
    nxt: dict[str, list[tuple[str, Fraction]]] = {}
    for (a, b), e in factors:
        nxt.setdefault(b, []).append((a, Fraction(e)))
    heads = nxt.pop(ORIGIN, [])
    chains = []
    for a, e in heads:
        exps = [e]
        cur = a
        while cur in nxt:
            links = nxt.pop(cur)
            if len(links) != 1:
                raise ValueError(f"gap factors branch at {cur}")
            cur, e = links[0]
            exps.append(e)
        chains.append(exps)
    if nxt:
        raise ValueError("gap factors do not form chains rooted at the origin")
    return chains


def _log_chain_sum(exponents, n: int) -> float:
    """``log sum_{1 <= t_1 <= ... <= t_k <= n} prod |t_l - t_{l-1}|_+^{-e_l}``."""
    gaps = np.maximum(np.arange(n + 1, dtype=float), 1.0)
    f = np.zeros(n + 1)
    f[0] = 1.0
    log_scale = 0.0
    for e in exponents:
        w = gaps ** (-float(e))
        if n <= 2048:
            g = np.convolve(f, w)[: n + 1]
        else:
            g = fftconvolve(f, w)[: n + 1]
        g[0] = 0.0
        g = np.maximum(g, 0.0)
        top = g.max()
        log_scale += math.log(top)
        f = g / top
    return log_scale + math.log(f.sum())


def log_summation_bound(certificate, n: int) -> float:
    """Logarithm of :func:`summation_bound`."""
    factors = certificate.factors() if isinstance(certificate, ReductionCertificate) else list(certificate)
    if n < 1:
        raise ValueError("n must be positive")
    return sum(_log_chain_sum(ch, n) for ch in _chains(factors))


def summation_bound(certificate, n: int) -> float:
    """Sum of the certificate's gap product over ordered times in ``1..n``.

    Each walk contributes one chain ``0 <= t_1 <= ... <= t_k <= n`` and the
    chains are summed independently.  The symbolic constant is not
    included.  An empty factor list gives 1.
    """
    lg = log_summation_bound(certificate, n)
    return math.exp(lg) if lg < 709.0 else math.inf
