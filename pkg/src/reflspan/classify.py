"""Language-level classification of marked-word automata.

Each check builds small violation automata (one per variable or variable
pair), intersects them with the input lazily, and reports a shortest accepted
violating word as witness.  Verdicts therefore concern *every* accepted word,
not a sample.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Hashable, Iterable

from .automaton import Nfa, trim
from .errors import PreconditionError
from .spans import (
    ExtSymbol,
    SymbolKind,
    ValidOrder,
    Variable,
    close_marker,
    open_marker,
    ref,
)
from .words import MarkedWord, format_word

Pred = Callable[[ExtSymbol], bool]


def _any(_: ExtSymbol) -> bool:
    return True


def _non_marker(s: ExtSymbol) -> bool:
    return not s.is_marker


def _is(sym: ExtSymbol) -> Pred:
    return lambda s: s == sym


def _not(sym: ExtSymbol) -> Pred:
    return lambda s: s != sym


def _marker_except(sym: ExtSymbol) -> Pred:
    return lambda s: s.is_marker and s != sym


class Pattern:
    """Small nondeterministic matcher with predicate-labelled edges."""

    def __init__(self) -> None:
        self._edges: list[list[tuple[Pred, int]]] = []
        self.finals: set[int] = set()
        self.initial = self.state()

    def state(self, final: bool = False) -> int:
        self._edges.append([])
        q = len(self._edges) - 1
        if final:
            self.finals.add(q)
        return q

    def edge(self, src: int, pred: Pred, dst: int) -> None:
        self._edges[src].append((pred, dst))

    def loop(self, q: int, pred: Pred) -> None:
        self.edge(q, pred, q)

    def step(self, q: int, sym: ExtSymbol) -> Iterable[int]:
        return (dst for pred, dst in self._edges[q] if pred(sym))

    def is_final(self, q: Hashable) -> bool:
        return q in self.finals


def match_shortest(m: Nfa, pattern) -> MarkedWord | None:
    """Shortest word accepted by both ``m`` and ``pattern`` (lazy product BFS)."""
    start = (m.initial, pattern.initial)
    parent: dict[tuple[int, Hashable], tuple[tuple[int, Hashable] | None, ExtSymbol | None]] = {start: (None, None)}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        q, p = node
        if q in m.finals and pattern.is_final(p):
            word: list[ExtSymbol] = []
            cur: tuple[int, Hashable] | None = node
            while cur is not None:
                prev, sym = parent[cur]
                if sym is not None:
                    word.append(sym)
                cur = prev
            return tuple(reversed(word))
        for label, dst in m._adj[q]:
            if label is None:
                nxt = (dst, p)
                if nxt not in parent:
                    parent[nxt] = (node, None)
                    queue.append(nxt)
            else:
                for p2 in pattern.step(p, label):
                    nxt = (dst, p2)
                    if nxt not in parent:
                        parent[nxt] = (node, label)
                        queue.append(nxt)
    return None


def _first_witness(m: Nfa, patterns: Iterable) -> MarkedWord | None:
    best: MarkedWord | None = None
    for pattern in patterns:
        w = match_shortest(m, pattern)
        if w is not None and (best is None or len(w) < len(best)):
            best = w
    return best


# -- subword-marked / functional / hierarchical / quasi-disjoint ------------------


def _subword_marked_patterns(x: Variable) -> list[Pattern]:
    ox, cx = open_marker(x), close_marker(x)
    out = []

    p = Pattern()  # close with no prior open
    hit = p.state(final=True)
    p.loop(p.initial, _not(ox))
    p.edge(p.initial, _is(cx), hit)
    p.loop(hit, _any)
    out.append(p)

    p = Pattern()  # open never closed afterwards
    hit = p.state(final=True)
    p.loop(p.initial, _any)
    p.edge(p.initial, _is(ox), hit)
    p.loop(hit, _not(cx))
    out.append(p)

    for sym in (ox, cx):  # duplicated marker
        p = Pattern()
        mid = p.state()
        hit = p.state(final=True)
        p.loop(p.initial, _any)
        p.edge(p.initial, _is(sym), mid)
        p.loop(mid, _any)
        p.edge(mid, _is(sym), hit)
        p.loop(hit, _any)
        out.append(p)
    return out


def _chain(stages: list[tuple[Pred | None, Pred]], tail_any: bool = True) -> Pattern:
    """Chain pattern: per stage an optional self-loop predicate, then an advance edge."""
    p = Pattern()
    cur = p.initial
    for loop_pred, advance in stages:
        if loop_pred is not None:
            p.loop(cur, loop_pred)
        nxt = p.state()
        p.edge(cur, advance, nxt)
        cur = nxt
    p.finals.add(cur)
    if tail_any:
        p.loop(cur, _any)
    return p


def _non_functional_pattern(x: Variable) -> Pattern:
    p = Pattern()
    p.finals.add(p.initial)
    p.loop(p.initial, _not(open_marker(x)))
    return p


def _non_hierarchical_pattern(x: Variable, y: Variable) -> Pattern:
    ox, oy, cx, cy = open_marker(x), open_marker(y), close_marker(x), close_marker(y)
    return _chain(
        [
            (_any, _is(ox)),
            (_any, _non_marker),
            (_any, _is(oy)),
            (_any, _non_marker),
            (_any, _is(cx)),
            (_any, _non_marker),
            (_any, _is(cy)),
        ]
    )


def _non_quasi_disjoint_patterns(x: Variable, y: Variable) -> list[Pattern]:
    ox, oy, cx, cy = open_marker(x), open_marker(y), close_marker(x), close_marker(y)
    interleaved_left = _chain(  # non-empty gap before the inner open and between the closes
        [
            (_any, _is(ox)),
            (_any, _non_marker),
            (_any, _is(oy)),
            (_any, _non_marker),
            (_any, _is(cx)),
            (_any, _is(cy)),
        ]
    )
    interleaved_right = _chain(
        [
            (_any, _is(ox)),
            (_any, _is(oy)),
            (_any, _non_marker),
            (_any, _is(cx)),
            (_any, _non_marker),
            (_any, _is(cy)),
        ]
    )
    nested_empty = _chain(  # empty inner span strictly inside the outer one
        [
            (_any, _is(ox)),
            (_any, _non_marker),
            (_any, _is(oy)),
            (lambda s: s.is_marker, _is(cy)),
            (_any, _non_marker),
            (_any, _is(cx)),
        ]
    )
    nested_left = _chain(
        [
            (_any, _is(ox)),
            (_any, _non_marker),
            (_any, _is(oy)),
            (_any, _non_marker),
            (_any, _is(cy)),
            (_any, _is(cx)),
        ]
    )
    nested_right = _chain(
        [
            (_any, _is(ox)),
            (_any, _is(oy)),
            (_any, _non_marker),
            (_any, _is(cy)),
            (_any, _non_marker),
            (_any, _is(cx)),
        ]
    )
    return [interleaved_left, interleaved_right, nested_empty, nested_left, nested_right]


@lru_cache(maxsize=4096)
def subword_marked_witness(m: Nfa) -> MarkedWord | None:
    """Shortest accepted word whose marker structure is broken, if any."""
    patterns = [p for x in sorted(m.vars) for p in _subword_marked_patterns(x)]
    return _first_witness(m, patterns)


def check_subword_marked(m: Nfa) -> tuple[bool, MarkedWord | None]:
    w = subword_marked_witness(m)
    return w is None, w


def _require_subword_marked(m: Nfa) -> None:
    w = subword_marked_witness(m)
    if w is not None:
        raise PreconditionError("language is not subword-marked", format_word(w))


@lru_cache(maxsize=4096)
def tuple_property_witnesses(m: Nfa) -> dict[str, MarkedWord | None]:
    """Witnesses against functionality / hierarchicality / quasi-disjointness."""
    _require_subword_marked(m)
    variables = sorted(m.vars)
    functional = _first_witness(m, [_non_functional_pattern(x) for x in variables])
    pairs = [(x, y) for x in variables for y in variables if x != y]
    hierarchical = _first_witness(m, [_non_hierarchical_pattern(x, y) for x, y in pairs])
    quasi = _first_witness(m, [p for x, y in pairs for p in _non_quasi_disjoint_patterns(x, y)])
    return {"functional": functional, "hierarchical": hierarchical, "quasi_disjoint": quasi}


def check_tuple_properties(m: Nfa) -> dict[str, bool]:
    witnesses = tuple_property_witnesses(m)
    return {name: w is None for name, w in witnesses.items()}


@lru_cache(maxsize=4096)
def ref_language_witness(m: Nfa) -> MarkedWord | None:
    """Shortest accepted word using a reference before its definition closed."""
    _require_subword_marked(m)
    patterns = []
    for x in sorted(m.vars):
        p = Pattern()
        hit = p.state(final=True)
        p.loop(p.initial, _not(close_marker(x)))
        p.edge(p.initial, _is(ref(x)), hit)
        p.loop(hit, _any)
        patterns.append(p)
    return _first_witness(m, patterns)


def check_ref_language(m: Nfa) -> tuple[bool, MarkedWord | None]:
    w = ref_language_witness(m)
    return w is None, w


def _require_ref_language(m: Nfa) -> None:
    w = ref_language_witness(m)
    if w is not None:
        raise PreconditionError("language is not a ref-language", format_word(w))


# -- reference bound ---------------------------------------------------------------


def _sccs(n_states: int, edges: list[list[int]]) -> list[int]:
    """Tarjan (iterative); returns an SCC id per state, ids in reverse topological order."""
    index = [0] * n_states
    low = [0] * n_states
    on_stack = [False] * n_states
    visited = [False] * n_states
    comp = [-1] * n_states
    stack: list[int] = []
    counter = 1
    n_comps = 0
    for root in range(n_states):
        if visited[root]:
            continue
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            v, ei = work[-1]
            if ei == 0:
                visited[v] = True
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            while ei < len(edges[v]):
                w = edges[v][ei]
                ei += 1
                if not visited[w]:
                    work[-1] = (v, ei)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = n_comps
                    if w == v:
                        break
                n_comps += 1
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])
    return comp


def reference_bound(m: Nfa) -> int | None:
    """Smallest structural bound on per-variable reference occurrences, None if unbounded.

    Decided on the trimmed automaton: any reference transition lying on a cycle
    makes the language structurally unbounded; otherwise the bound is the
    longest-path count of reference edges per variable over the condensation.
    """
    _require_ref_language(m)
    t = trim(m)
    if not t.finals:
        return 0
    fwd: list[list[int]] = [[] for _ in range(t.n_states)]
    for src, _, dst in t.transitions:
        fwd[src].append(dst)
    comp = _sccs(t.n_states, fwd)
    ref_vars = sorted({lab.value for _, lab, _ in t.transitions if lab is not None and lab.kind is SymbolKind.REF})
    if not ref_vars:
        return 0
    for src, lab, dst in t.transitions:
        if lab is not None and lab.kind is SymbolKind.REF and comp[src] == comp[dst]:
            return None
    # condensation: Tarjan ids are in reverse topological order
    n_comps = max(comp) + 1
    topo = sorted(range(n_comps), reverse=True)
    bound = 0
    for x in ref_vars:
        rx = ref(x)
        best = [None] * n_comps  # type: list[int | None]
        best[comp[t.initial]] = 0
        for c in topo:
            if best[c] is None:
                continue
            base = best[c]
            for src, lab, dst in t.transitions:
                if comp[src] != c or comp[dst] == c:
                    continue
                gain = base + (1 if lab == rx else 0)
                if best[comp[dst]] is None or gain > best[comp[dst]]:
                    best[comp[dst]] = gain
        reach = max((best[comp[f]] or 0 for f in t.finals if best[comp[f]] is not None), default=0)
        bound = max(bound, reach)
    return bound


# -- strongly reference extracting -------------------------------------------------


@dataclass(frozen=True)
class VariablePartition:
    """Content variables and, per content variable, its dedicated extraction variables."""

    refs: frozenset[Variable]
    extractors: tuple[tuple[Variable, frozenset[Variable]], ...]

    @staticmethod
    def of(refs: Iterable[Variable], extractors: dict[Variable, Iterable[Variable]]) -> VariablePartition:
        return VariablePartition(
            frozenset(refs),
            tuple(sorted((x, frozenset(ys)) for x, ys in extractors.items())),
        )

    def extractor_map(self) -> dict[Variable, frozenset[Variable]]:
        return dict(self.extractors)

    def all_variables(self) -> frozenset[Variable]:
        out = set(self.refs)
        for _, ys in self.extractors:
            out |= ys
        return frozenset(out)

    def validate_for(self, variables: frozenset[Variable]) -> None:
        groups = [set(self.refs)] + [set(ys) for _, ys in self.extractors]
        total = sum(len(g) for g in groups)
        union = set().union(*groups) if groups else set()
        if total != len(union):
            raise PreconditionError("partition groups are not pairwise disjoint")
        if union != set(variables):
            raise PreconditionError(
                f"partition covers {sorted(union)} but the automaton declares {sorted(variables)}"
            )
        for x, _ in self.extractors:
            if x not in self.refs:
                raise PreconditionError(f"extractor group is keyed by non-content variable {x!r}")


class _UnwrappedRefPattern:
    """Accepts words containing a reference of ``x`` not enclosed, across markers
    only, by an open/close pair of one of its extraction variables."""

    def __init__(self, x: Variable, extractors: frozenset[Variable]):
        self.x = x
        self.extractors = extractors
        self.initial: Hashable = ("scan", frozenset())

    def step(self, state: Hashable, sym: ExtSymbol) -> Iterable[Hashable]:
        phase = state[0]
        if phase == "done":
            yield state
            return
        if phase == "after":
            alive = state[1]
            if sym.is_marker:
                if sym.kind is SymbolKind.CLOSE and sym.value in alive:
                    return  # properly wrapped after all
                yield state
            else:
                yield ("done",)
            return
        open_set = state[1]
        if sym.kind is SymbolKind.OPEN and sym.value in self.extractors:
            yield ("scan", open_set | {sym.value})
        elif sym.kind is SymbolKind.CLOSE and sym.value in self.extractors:
            yield ("scan", open_set - {sym.value})
        elif sym.is_marker:
            yield state
        else:
            if sym.kind is SymbolKind.REF and sym.value == self.x:
                yield ("after", open_set)  # guess: this occurrence is the violation
            yield ("scan", frozenset())

    def is_final(self, state: Hashable) -> bool:
        return state[0] in ("after", "done")


def _extractor_shape_patterns(x: Variable, y: Variable) -> list[Pattern]:
    oy, cy = open_marker(y), close_marker(y)
    rx, ry = ref(x), ref(y)
    first_wrong = _chain(  # first payload symbol inside y is not a reference of x
        [(_any, _is(oy)), (lambda s: s.is_marker, lambda s: not s.is_marker and s != rx)]
    )
    second_payload = _chain(  # a second payload symbol before y closes
        [(_any, _is(oy)), (lambda s: s.is_marker, _is(rx)), (_marker_except(cy), _non_marker)]
    )
    empty_def = _chain(  # y defined with no payload at all
        [(_any, _is(oy)), (_marker_except(cy), _is(cy))]
    )
    referenced = _chain([(_any, _is(ry))])  # extraction variables are never referenced
    return [first_wrong, second_payload, empty_def, referenced]


def check_strongly_ref_extracting(
    m: Nfa, p: VariablePartition
) -> tuple[bool, MarkedWord | str | None]:
    """All accepted words follow the reference-extraction discipline for ``p``.

    Checks, per content variable: every reference is wrapped by a dedicated
    extraction variable (markers only in between); extraction variables hold
    exactly one reference and are never referenced themselves; and every
    referenced content variable expands to at least two letters.
    """
    _require_ref_language(m)
    p.validate_for(m.vars)
    ext = p.extractor_map()
    for x in sorted(p.refs):
        w = match_shortest(m, _UnwrappedRefPattern(x, ext.get(x, frozenset())))
        if w is not None:
            return False, w
    for x, ys in sorted(ext.items()):
        for y in sorted(ys):
            w = _first_witness(m, _extractor_shape_patterns(x, y))
            if w is not None:
                return False, w
    from .transform import short_reference_violation

    note = short_reference_violation(m, p.refs)
    if note is not None:
        return False, note
    return True, None


# -- normalization order ------------------------------------------------------------


@lru_cache(maxsize=4096)
def adjacent_marker_pairs(m: Nfa) -> frozenset[tuple[ExtSymbol, ExtSymbol]]:
    """Marker pairs that occur adjacently in some accepted word."""
    t = trim(m)
    pairs: set[tuple[ExtSymbol, ExtSymbol]] = set()
    marker_out: list[list[ExtSymbol]] = [[] for _ in range(t.n_states)]
    for src, lab, dst in t.transitions:
        if lab is not None and lab.is_marker:
            marker_out[src].append(lab)
    for src, lab, dst in t.transitions:
        if lab is None or not lab.is_marker:
            continue
        for q in t.eps_closure([dst]):
            for second in marker_out[q]:
                pairs.add((lab, second))
    return frozenset(pairs)


def detect_normalized_order(m: Nfa) -> ValidOrder | None:
    """A valid marker order the language is normalized for, if one exists."""
    markers = [open_marker(x) for x in sorted(m.vars)] + [close_marker(x) for x in sorted(m.vars)]
    succ: dict[ExtSymbol, set[ExtSymbol]] = {s: set() for s in markers}
    indeg: dict[ExtSymbol, int] = {s: 0 for s in markers}

    def constrain(a: ExtSymbol, b: ExtSymbol) -> None:
        if a != b and b not in succ[a]:
            succ[a].add(b)
            indeg[b] += 1

    for x in m.vars:
        constrain(open_marker(x), close_marker(x))
    for a, b in adjacent_marker_pairs(m):
        constrain(a, b)
    ready = sorted((s for s in markers if indeg[s] == 0), key=ExtSymbol.sort_key)
    order: list[ExtSymbol] = []
    while ready:
        s = ready.pop(0)
        order.append(s)
        changed = False
        for nxt in succ[s]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort(key=ExtSymbol.sort_key)
    if len(order) != len(markers):
        return None  # cyclic adjacency constraints: not normalized for any order
    return ValidOrder(tuple(order))


def is_normalized_automaton(m: Nfa, order: ValidOrder) -> bool:
    return all(order.rank(a) <= order.rank(b) for a, b in adjacent_marker_pairs(m))


# -- aggregate report ----------------------------------------------------------------


@dataclass(frozen=True)
class ClassReport:
    is_subword_marked: bool
    is_ref_language: bool
    functional: bool | None
    hierarchical: bool | None
    quasi_disjoint: bool | None
    normalized_order: ValidOrder | None
    reference_bound: int | None
    violations: tuple[str, ...] = field(default=())
    notes: tuple[str, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "is_subword_marked": self.is_subword_marked,
            "is_ref_language": self.is_ref_language,
            "functional": self.functional,
            "hierarchical": self.hierarchical,
            "quasi_disjoint": self.quasi_disjoint,
            "normalized_order": str(self.normalized_order) if self.normalized_order else None,
            "reference_bound": self.reference_bound,
            "violations": list(self.violations),
            "notes": list(self.notes),
        }


def classify(m: Nfa) -> ClassReport:
    """Run every language-level check and collect witnesses."""
    violations: list[str] = []
    notes: list[str] = []
    sw_ok, sw_witness = check_subword_marked(m)
    if not sw_ok:
        violations.append(f"not subword-marked: {format_word(sw_witness)}")
        return ClassReport(False, False, None, None, None, None, None, tuple(violations))

    witnesses = tuple_property_witnesses(m)
    for name in ("functional", "hierarchical", "quasi_disjoint"):
        w = witnesses[name]
        if w is not None:
            violations.append(f"not {name}: {format_word(w)}")
    ref_ok, ref_witness = check_ref_language(m)
    if not ref_ok:
        violations.append(f"not a ref-language: {format_word(ref_witness)}")
    bound: int | None = None
    if ref_ok:
        bound = reference_bound(m)
        if bound is None:
            notes.append(
                "reference bound is structural: a reference lies on a cycle, "
                "reported unbounded even if semantically bounded"
            )
    return ClassReport(
        is_subword_marked=True,
        is_ref_language=ref_ok,
        functional=witnesses["functional"] is None,
        hierarchical=witnesses["hierarchical"] is None,
        quasi_disjoint=witnesses["quasi_disjoint"] is None,
        normalized_order=detect_normalized_order(m),
        reference_bound=bound,
        violations=tuple(violations),
        notes=tuple(notes),
    )
