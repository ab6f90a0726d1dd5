"""Weighted finite-state transducers over the log semiring.

Weights are log-probabilities: path extension adds weights, and alternative
paths are combined with log-sum-exp.  The additive identity (no path) is
``-inf`` and the multiplicative identity is ``0.0``.

A :class:`Wfst` is an immutable value.  All algorithms here are pure
functions returning new graphs.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Iterable, Mapping, NamedTuple, Sequence

EPSILON = 0
ZERO = -math.inf
ONE = 0.0

DEFAULT_PATH_LIMIT = 10**6


class WfstError(Exception):
    """Base class for graph errors."""


class CyclicGraph(WfstError):
    pass


class PathExplosion(WfstError):
    pass


class ParseError(WfstError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def log_plus(a: float, b: float) -> float:
    """Semiring sum: log(exp(a) + exp(b)), max-shifted."""
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def log_times(a: float, b: float) -> float:
    return a + b


def log_sum(values: Iterable[float]) -> float:
    """Semiring sum of any number of weights."""
    vals = [v for v in values if v != ZERO]
    if not vals:
        return ZERO
    m = max(vals)
    if m == math.inf:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))


class Arc(NamedTuple):
    src: int
    dst: int
    ilabel: int
    olabel: int
    weight: float


class Path(NamedTuple):
    """One start-to-final path; label sequences have epsilons removed."""

    ilabels: tuple[int, ...]
    olabels: tuple[int, ...]
    weight: float
    arcs: tuple[Arc, ...]


class Wfst:
    """Immutable transducer with dense state ids ``0..num_states-1``.

    ``finals`` maps a state to its final weight; states absent from it are
    not final.  A graph with ``num_states == 0`` is the empty graph.
    """

    __slots__ = ("num_states", "start", "_finals", "arcs", "_out")

    def __init__(
        self,
        num_states: int,
        arcs: Iterable[Arc | tuple] = (),
        finals: Mapping[int, float] | None = None,
        start: int = 0,
    ):
        arcs = tuple(a if isinstance(a, Arc) else Arc(*a) for a in arcs)
        finals = {int(s): float(w) for s, w in (finals or {}).items() if w != ZERO}
        if num_states < 0:
            raise ValueError("num_states must be non-negative")
        if num_states and not 0 <= start < num_states:
            raise ValueError(f"start state {start} out of range")
        for a in arcs:
            if not (0 <= a.src < num_states and 0 <= a.dst < num_states):
                raise ValueError(f"arc {a} refers to a missing state")
            if a.ilabel < 0 or a.olabel < 0:
                raise ValueError(f"negative label on arc {a}")
        for s in finals:
            if not 0 <= s < num_states:
                raise ValueError(f"final state {s} out of range")
        out: list[list[Arc]] = [[] for _ in range(num_states)]
        for a in arcs:
            out[a.src].append(a)
        self.num_states = num_states
        self.start = start
        self._finals = finals
        self._out = tuple(tuple(x) for x in out)
        # grouped by source so iteration order is stable
        self.arcs = tuple(a for group in self._out for a in group)

    @classmethod
    def empty(cls) -> "Wfst":
        return cls(0)

    @property
    def finals(self) -> dict[int, float]:
        return dict(self._finals)

    def final_weight(self, state: int) -> float:
        return self._finals.get(state, ZERO)

    def is_final(self, state: int) -> bool:
        return state in self._finals

    def arcs_from(self, state: int) -> tuple[Arc, ...]:
        return self._out[state]

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def __len__(self) -> int:
        return self.num_states

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Wfst):
            return NotImplemented
        return (
            self.num_states == other.num_states
            and (self.start == other.start or self.num_states == 0)
            and self._finals == other._finals
            and sorted(self.arcs) == sorted(other.arcs)
        )

    def __hash__(self):
        return hash((self.num_states, self.start, len(self.arcs)))

    def __repr__(self) -> str:
        return (
            f"Wfst(num_states={self.num_states}, num_arcs={self.num_arcs}, "
            f"finals={sorted(self._finals)})"
        )

    def canonical(self) -> "Wfst":
        """Renumber states in breadth-first order from the start state.

        Outgoing arcs are visited in (ilabel, olabel, weight) order, so two
        isomorphic graphs built in different orders map to the same value.
        States unreachable from the start are dropped.
        """
        if self.num_states == 0:
            return self
        key = lambda a: (a.ilabel, a.olabel, a.weight)
        order = _bfs_order(self, key)
        return _renumber(self, order, key)

    def isomorphic(self, other: "Wfst") -> bool:
        return self.canonical() == other.canonical()

    def to_dot(
        self,
        isymbols: Mapping[int, str] | None = None,
        osymbols: Mapping[int, str] | None = None,
        name: str = "wfst",
    ) -> str:
        return write_dot(self, isymbols, osymbols, name)


def _bfs_order(w: Wfst, key=None) -> list[int]:
    seen = {w.start}
    order = [w.start]
    queue = deque([w.start])
    while queue:
        s = queue.popleft()
        arcs = w.arcs_from(s)
        if key is not None:
            arcs = sorted(arcs, key=key)
        for a in arcs:
            if a.dst not in seen:
                seen.add(a.dst)
                order.append(a.dst)
                queue.append(a.dst)
    return order


def _renumber(w: Wfst, order: Sequence[int], key=None) -> Wfst:
    new_id = {old: new for new, old in enumerate(order)}
    arcs = []
    for old in order:
        src_arcs = w.arcs_from(old)
        if key is not None:
            src_arcs = sorted(src_arcs, key=key)
        for a in src_arcs:
            if a.dst in new_id:
                arcs.append(Arc(new_id[old], new_id[a.dst], a.ilabel, a.olabel, a.weight))
    finals = {new_id[s]: f for s, f in w.finals.items() if s in new_id}
    return Wfst(len(order), arcs, finals, start=0)


def topological_order(w: Wfst) -> list[int]:
    """Kahn's algorithm over all states; raises CyclicGraph on any cycle."""
    indeg = [0] * w.num_states
    for a in w.arcs:
        indeg[a.dst] += 1
    queue = deque(s for s in range(w.num_states) if indeg[s] == 0)
    order = []
    while queue:
        s = queue.popleft()
        order.append(s)
        for a in w.arcs_from(s):
            indeg[a.dst] -= 1
            if indeg[a.dst] == 0:
                queue.append(a.dst)
    if len(order) != w.num_states:
        raise CyclicGraph("graph contains a cycle")
    return order


def is_acyclic(w: Wfst) -> bool:
    try:
        topological_order(w)
    except CyclicGraph:
        return False
    return True


def total_weight(w: Wfst) -> float:
    """Semiring sum over all start-to-final paths of an acyclic graph.

    Returns ``-inf`` when no final state is reachable.
    """
    if w.num_states == 0:
        return ZERO
    order = topological_order(w)
    alpha = [ZERO] * w.num_states
    alpha[w.start] = ONE
    for s in order:
        if alpha[s] == ZERO:
            continue
        for a in w.arcs_from(s):
            alpha[a.dst] = log_plus(alpha[a.dst], alpha[s] + a.weight)
    return log_sum(alpha[s] + f for s, f in w.finals.items())


def enumerate_paths(w: Wfst, limit: int = DEFAULT_PATH_LIMIT) -> list[Path]:
    """List every start-to-final path of an acyclic graph exactly once."""
    if w.num_states == 0:
        return []
    topological_order(w)
    paths: list[Path] = []
    stack: list[tuple[int, int]] = [(w.start, 0)]
    trail: list[Arc] = []

    def emit(state: int) -> None:
        il = tuple(a.ilabel for a in trail if a.ilabel != EPSILON)
        ol = tuple(a.olabel for a in trail if a.olabel != EPSILON)
        weight = math.fsum(a.weight for a in trail) + w.final_weight(state)
        paths.append(Path(il, ol, weight, tuple(trail)))
        if len(paths) > limit:
            raise PathExplosion(f"more than {limit} paths")

    if w.is_final(w.start):
        emit(w.start)
    # iterative DFS: (state, index of next arc to try)
    while stack:
        state, i = stack[-1]
        out = w.arcs_from(state)
        if i == len(out):
            stack.pop()
            if trail:
                trail.pop()
            continue
        stack[-1] = (state, i + 1)
        a = out[i]
        trail.append(a)
        if w.is_final(a.dst):
            emit(a.dst)
        stack.append((a.dst, 0))
    return paths


def connect(w: Wfst) -> Wfst:
    """Trim states that are not both accessible and co-accessible."""
    if w.num_states == 0:
        return w
    reach = set(_bfs_order(w))
    incoming: list[list[int]] = [[] for _ in range(w.num_states)]
    for a in w.arcs:
        incoming[a.dst].append(a.src)
    coreach = set(w.finals)
    queue = deque(coreach)
    while queue:
        s = queue.popleft()
        for p in incoming[s]:
            if p not in coreach:
                coreach.add(p)
                queue.append(p)
    keep = reach & coreach
    if w.start not in keep:
        return Wfst.empty()
    trimmed = _restrict(w, keep)
    return _renumber(trimmed, _bfs_order(trimmed))


def _restrict(w: Wfst, keep: set[int]) -> Wfst:
    arcs = [a for a in w.arcs if a.src in keep and a.dst in keep]
    finals = {s: f for s, f in w.finals.items() if s in keep}
    return Wfst(w.num_states, arcs, finals, w.start)


def compose(a: Wfst, b: Wfst) -> Wfst:
    """Compose ``a`` (output side) with ``b`` (input side).

    Epsilons are handled with the three-state epsilon filter, so each pair
    of matching paths yields exactly one path in the result:

    * filter 0: free
    * filter 1: ``a`` advanced alone on an output epsilon
    * filter 2: ``b`` advanced alone on an input epsilon

    Only states reachable from the start are materialised; the result is
    not trimmed.
    """
    if a.num_states == 0 or b.num_states == 0:
        return Wfst.empty()

    b_by_ilabel: list[dict[int, list[Arc]]] = []
    for s in range(b.num_states):
        table: dict[int, list[Arc]] = {}
        for arc in b.arcs_from(s):
            table.setdefault(arc.ilabel, []).append(arc)
        b_by_ilabel.append(table)

    start = (a.start, b.start, 0)
    ids = {start: 0}
    queue = deque([start])
    arcs: list[Arc] = []
    finals: dict[int, float] = {}

    def target(triple):
        if triple not in ids:
            ids[triple] = len(ids)
            queue.append(triple)
        return ids[triple]

    while queue:
        triple = queue.popleft()
        qa, qb, f = triple
        src = ids[triple]
        if a.is_final(qa) and b.is_final(qb):
            finals[src] = a.final_weight(qa) + b.final_weight(qb)
        b_eps = b_by_ilabel[qb].get(EPSILON, ())
        for arc_a in a.arcs_from(qa):
            if arc_a.olabel == EPSILON:
                if f != 2:
                    dst = target((arc_a.dst, qb, 1))
                    arcs.append(Arc(src, dst, arc_a.ilabel, EPSILON, arc_a.weight))
                if f == 0:
                    for arc_b in b_eps:
                        dst = target((arc_a.dst, arc_b.dst, 0))
                        arcs.append(
                            Arc(src, dst, arc_a.ilabel, arc_b.olabel, arc_a.weight + arc_b.weight)
                        )
            else:
                for arc_b in b_by_ilabel[qb].get(arc_a.olabel, ()):
                    dst = target((arc_a.dst, arc_b.dst, 0))
                    arcs.append(
                        Arc(src, dst, arc_a.ilabel, arc_b.olabel, arc_a.weight + arc_b.weight)
                    )
        if f != 1:
            for arc_b in b_eps:
                dst = target((qa, arc_b.dst, 2))
                arcs.append(Arc(src, dst, EPSILON, arc_b.olabel, arc_b.weight))

    return Wfst(len(ids), arcs, finals, start=0)


def identity_acceptor(labels: Iterable[int]) -> Wfst:
    """One-state acceptor with a weight-0 self-loop per label."""
    return Wfst(1, [Arc(0, 0, l, l, ONE) for l in labels], {0: ONE})


def linear_acceptor(labels: Sequence[int], weights: Sequence[float] | None = None) -> Wfst:
    if weights is None:
        weights = [ONE] * len(labels)
    arcs = [Arc(i, i + 1, l, l, w) for i, (l, w) in enumerate(zip(labels, weights))]
    return Wfst(len(labels) + 1, arcs, {len(labels): ONE})


# --------------------------------------------------------------------------
# AT&T text format


def _fmt(x: float) -> str:
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


def write_text(w: Wfst) -> str:
    """Serialise in AT&T text form.

    Arc lines are ``src dst ilabel olabel weight``; final lines are
    ``state weight``.  The start state's block comes first, which is how the
    reader recovers it, so a start state with neither arcs nor a final
    weight cannot be represented.  Weights are written as log-probabilities.
    """
    if w.num_states == 0:
        return ""
    lines = []
    states = [w.start] + [s for s in range(w.num_states) if s != w.start]
    for s in states:
        for a in w.arcs_from(s):
            lines.append(f"{a.src} {a.dst} {a.ilabel} {a.olabel} {_fmt(a.weight)}")
        if w.is_final(s):
            lines.append(f"{s} {_fmt(w.final_weight(s))}")
    return "".join(line + "\n" for line in lines)


def read_text(text: str) -> Wfst:
    arcs: list[Arc] = []
    finals: dict[int, float] = {}
    start = None
    max_state = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            if len(fields) in (4, 5):
                src, dst, il, ol = (int(x) for x in fields[:4])
                weight = float(fields[4]) if len(fields) == 5 else ONE
                if min(src, dst, il, ol) < 0:
                    raise ValueError("negative id")
                arcs.append(Arc(src, dst, il, ol, weight))
                state, max_state = src, max(max_state, src, dst)
            elif len(fields) in (1, 2):
                state = int(fields[0])
                weight = float(fields[1]) if len(fields) == 2 else ONE
                if state < 0:
                    raise ValueError("negative id")
                finals[state] = weight
                max_state = max(max_state, state)
            else:
                raise ParseError(f"expected 1, 2, 4 or 5 fields, got {len(fields)}", lineno)
        except ValueError as exc:
            raise ParseError(f"malformed line {raw!r} ({exc})", lineno) from None
        if start is None:
            start = state
    if start is None:
        return Wfst.empty()
    return Wfst(max_state + 1, arcs, finals, start)


def write_dot(
    w: Wfst,
    isymbols: Mapping[int, str] | None = None,
    osymbols: Mapping[int, str] | None = None,
    name: str = "wfst",
) -> str:
    """Graphviz rendering; arcs are labelled ``i:o/w``."""
    isymbols = isymbols or {}
    osymbols = osymbols or isymbols

    def sym(table, label):
        if label == EPSILON:
            return table.get(label, "<eps>")
        return table.get(label, str(label))

    out = [f"digraph {name} {{", "  rankdir = LR;"]
    for s in range(w.num_states):
        shape = "doublecircle" if w.is_final(s) else "circle"
        style = ", style = bold" if s == w.start else ""
        label = str(s)
        if w.is_final(s) and w.final_weight(s) != ONE:
            label += f"/{w.final_weight(s):.6g}"
        out.append(f'  {s} [label = "{label}", shape = {shape}{style}];')
    for a in w.arcs:
        text = f"{sym(isymbols, a.ilabel)}:{sym(osymbols, a.olabel)}/{a.weight:.6g}"
        text = text.replace('"', '\\"')
        out.append(f'  {a.src} -> {a.dst} [label = "{text}"];')
    out.append("}")
    return "\n".join(out) + "\n"
