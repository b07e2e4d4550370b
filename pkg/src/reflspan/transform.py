"""Language-preserving automaton rewrites.

All constructions here buffer marker runs or per-variable statuses in the
state and are built lazily, so only reachable combinations are materialized.
The public entry points guard the worst-case exponential constructions with a
variable-count limit; internal callers (the core-expression compiler) instead
run under an explicit state cap.
"""

from __future__ import annotations

from collections import deque
from enum import Enum
from typing import Hashable, Iterable

from .automaton import Nfa, NfaBuilder
from .errors import PreconditionError, ResourceLimitError
from .spans import ExtSymbol, SymbolKind, ValidOrder, Variable, open_marker
from .words import format_word


def open_of(close_sym: ExtSymbol) -> ExtSymbol:
    return open_marker(close_sym.value)

VAR_GUARD = 12
DEFAULT_STATE_CAP = 2_000_000


class LengthClass(Enum):
    """Abstraction of expanded definition length under concatenation."""

    ZERO = "zero"
    ONE = "one"
    TWO_PLUS = "two_plus"

    @property
    def as_int(self) -> int:
        return {"zero": 0, "one": 1, "two_plus": 2}[self.value]

    @staticmethod
    def from_int(n: int) -> "LengthClass":
        return (LengthClass.ZERO, LengthClass.ONE, LengthClass.TWO_PLUS)[min(n, 2)]


def _add_class(a: int, b: int) -> int:
    return min(2, a + b)


def _guard_vars(m: Nfa, op: str) -> None:
    if len(m.vars) > VAR_GUARD:
        raise ResourceLimitError(f"{op} rejected: {len(m.vars)} variables exceed the guard of {VAR_GUARD}")


def _require_subword_marked(m: Nfa) -> None:
    from .classify import subword_marked_witness

    w = subword_marked_witness(m)
    if w is not None:
        raise PreconditionError("language is not subword-marked", format_word(w))


def _require_ref_language(m: Nfa) -> None:
    from .classify import ref_language_witness

    w = ref_language_witness(m)
    if w is not None:
        raise PreconditionError("language is not a ref-language", format_word(w))


def _reorder_markers(m: Nfa, order: ValidOrder | None, max_states: int) -> Nfa:
    """Buffer each maximal marker run in the state and re-emit it.

    With ``order`` the run is emitted sorted (normalization); without it the
    run is emitted in every order (permutation closure).  Nodes are
    ("a", q, pending) while accumulating and ("e", q, remaining) while
    re-emitting; emission ends in ("e", q, empty) which carries the non-marker
    transitions and the acceptance of ``q``.
    """
    builder = NfaBuilder(m.sigma, m.vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            if len(index) >= max_states:
                raise ResourceLimitError(f"marker reordering exceeded {max_states} states")
            q = builder.add_state()
            index[key] = q
        return q

    start = ("a", m.initial, frozenset())
    node(start)
    queue: deque[Hashable] = deque([start])
    seen = {start}

    def push(key: Hashable) -> int:
        q = node(key)
        if key not in seen:
            seen.add(key)
            queue.append(key)
        return q

    finals: set[int] = set()
    while queue:
        key = queue.popleft()
        kind, q, pending = key
        src = index[key]
        if kind == "a":
            for label, dst in m._adj[q]:
                if label is None:
                    builder.add_edge(src, None, push(("a", dst, pending)))
                elif label.is_marker:
                    if label not in pending:
                        builder.add_edge(src, None, push(("a", dst, pending | {label})))
                else:
                    pass  # non-marker symbols are read from the flushed node
            builder.add_edge(src, None, push(("e", q, pending)))
        else:
            if pending:
                if order is not None:
                    emit = [min(pending, key=order.rank)]
                else:
                    # any order that keeps the word well-formed: a close may
                    # only leave the buffer once its open has
                    emit = [
                        sym
                        for sym in pending
                        if not (sym.kind is SymbolKind.CLOSE and open_of(sym) in pending)
                    ]
                for sym in emit:
                    builder.add_edge(src, sym, push(("e", q, pending - {sym})))
            else:
                if q in m.finals:
                    finals.add(src)
                for label, dst in m._adj[q]:
                    if label is not None and not label.is_marker:
                        builder.add_edge(src, label, push(("a", dst, frozenset())))
    return builder.build(index[start], finals)


def normalize(m: Nfa, ord: ValidOrder, max_states: int = DEFAULT_STATE_CAP) -> Nfa:
    """Sort every maximal marker run by ``ord``; the denoted spanner is unchanged."""
    _guard_vars(m, "normalize")
    _require_subword_marked(m)
    if ord.variables != m.vars:
        raise PreconditionError("order must cover exactly the declared variables")
    return _reorder_markers(m, ord, max_states)


def permutation_closure(m: Nfa, max_states: int = DEFAULT_STATE_CAP) -> Nfa:
    """Close the language under reordering of maximal marker runs."""
    _guard_vars(m, "permutation_closure")
    _require_ref_language(m)
    return _reorder_markers(m, None, max_states)


def reorder_markers_unguarded(m: Nfa, order: ValidOrder | None, max_states: int) -> Nfa:
    """Internal variant without the variable-count guard (state cap only)."""
    return _reorder_markers(m, order, max_states)


# -- reference-status constructions ------------------------------------------------

_BLANK, _OPEN, _NONEMPTY = 0, 1, 2


def remove_eps_references(m: Nfa, max_states: int = DEFAULT_STATE_CAP) -> Nfa:
    """Rewrite references of empty-expanding variables into silent transitions.

    The per-variable status (blank / open / known non-empty) is threaded
    through the state; a reference of a variable whose definition expanded to
    the empty word becomes an epsilon transition, so the result references
    only variables with non-empty expansions and has the same expansion image.
    """
    _require_ref_language(m)
    # only referenced variables ever have their status queried
    variables = sorted({label.value for _, label, _ in m.transitions if label is not None and label.kind is SymbolKind.REF})
    if not variables:
        return m
    vidx = {x: i for i, x in enumerate(variables)}
    tracked = set(variables)
    builder = NfaBuilder(m.sigma, m.vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            if len(index) >= max_states:
                raise ResourceLimitError(f"remove_eps_references exceeded {max_states} states")
            q = builder.add_state()
            index[key] = q
        return q

    start = (m.initial, (0,) * len(variables))
    node(start)
    queue = deque([start])
    seen = {start}

    def push(key: Hashable) -> int:
        q = node(key)
        if key not in seen:
            seen.add(key)
            queue.append(key)
        return q

    finals: set[int] = set()
    while queue:
        key = queue.popleft()
        q, status = key
        src = index[key]
        if q in m.finals:
            finals.add(src)
        for label, dst in m._adj[q]:
            if label is None:
                builder.add_edge(src, None, push((dst, status)))
                continue
            if label.kind is SymbolKind.OPEN:
                if label.value in tracked:
                    s2 = list(status)
                    s2[vidx[label.value]] = _OPEN
                    builder.add_edge(src, label, push((dst, tuple(s2))))
                else:
                    builder.add_edge(src, label, push((dst, status)))
            elif label.kind is SymbolKind.CLOSE:
                if label.value in tracked:
                    s2 = list(status)
                    i = vidx[label.value]
                    if s2[i] != _NONEMPTY:
                        s2[i] = _BLANK
                    builder.add_edge(src, label, push((dst, tuple(s2))))
                else:
                    builder.add_edge(src, label, push((dst, status)))
            elif label.kind is SymbolKind.TERM:
                s2 = tuple(_NONEMPTY if s == _OPEN else s for s in status)
                builder.add_edge(src, label, push((dst, s2)))
            else:  # reference
                if status[vidx[label.value]] == _NONEMPTY:
                    s2 = tuple(_NONEMPTY if s == _OPEN else s for s in status)
                    builder.add_edge(src, label, push((dst, s2)))
                else:
                    builder.add_edge(src, None, push((dst, status)))
    return builder.build(index[start], finals)


def _class_product(m: Nfa, max_states: int):
    """Reachable product graph threading a length class through each variable.

    Statuses: 'u' (never opened), ('o', c) while open, ('d', c) once closed,
    with c the accumulated class of the expanded definition content.  Paths
    that contradict marker discipline are simply not extended; accepted words
    of a ref-language never take them.
    """
    variables = sorted(m.vars)
    vidx = {x: i for i, x in enumerate(variables)}
    u = ("u",)
    start = (m.initial, (u,) * len(variables))
    nodes: dict[Hashable, int] = {start: 0}
    edges: list[tuple[int, ExtSymbol | None, int, tuple[Variable, int] | None]] = []
    order: list[Hashable] = [start]
    queue = deque([start])
    while queue:
        key = queue.popleft()
        q, status = key
        src = nodes[key]

        def push(dst_key: Hashable) -> int:
            n = nodes.get(dst_key)
            if n is None:
                if len(nodes) >= max_states:
                    raise ResourceLimitError(f"length-class analysis exceeded {max_states} states")
                n = len(nodes)
                nodes[dst_key] = n
                order.append(dst_key)
                queue.append(dst_key)
            return n

        for label, dst in m._adj[q]:
            if label is None:
                edges.append((src, None, push((dst, status)), None))
                continue
            if label.kind is SymbolKind.OPEN:
                i = vidx[label.value]
                if status[i] != u:
                    continue
                s2 = list(status)
                s2[i] = ("o", 0)
                edges.append((src, label, push((dst, tuple(s2))), None))
            elif label.kind is SymbolKind.CLOSE:
                i = vidx[label.value]
                if status[i][0] != "o":
                    continue
                c = status[i][1]
                s2 = list(status)
                s2[i] = ("d", c)
                edges.append((src, label, push((dst, tuple(s2))), (label.value, c)))
            elif label.kind is SymbolKind.TERM:
                s2 = tuple(("o", _add_class(s[1], 1)) if s[0] == "o" else s for s in status)
                edges.append((src, label, push((dst, s2)), None))
            else:  # reference
                i = vidx[label.value]
                if status[i][0] != "d":
                    continue
                c = status[i][1]
                s2 = tuple(("o", _add_class(s[1], c)) if s[0] == "o" else s for s in status)
                edges.append((src, label, push((dst, s2)), (label.value, c)))
    final_nodes = {nodes[key] for key in order if key[0] in m.finals}
    return nodes, order, edges, final_nodes


def _coreachable_nodes(n: int, edges, final_nodes: set[int]) -> set[int]:
    back: list[list[int]] = [[] for _ in range(n)]
    for src, _, dst, _ in edges:
        back[dst].append(src)
    seen = set(final_nodes)
    queue = deque(final_nodes)
    while queue:
        q = queue.popleft()
        for p in back[q]:
            if p not in seen:
                seen.add(p)
                queue.append(p)
    return seen


def length_class_analysis(m: Nfa, max_states: int = DEFAULT_STATE_CAP) -> dict[Variable, set[LengthClass]]:
    """Possible expanded-content length classes of each variable's definition."""
    _require_ref_language(m)
    nodes, order, edges, final_nodes = _class_product(m, max_states)
    alive = _coreachable_nodes(len(nodes), edges, final_nodes)
    out: dict[Variable, set[LengthClass]] = {x: set() for x in sorted(m.vars)}
    for src, label, dst, tag in edges:
        if tag is None or dst not in alive:
            continue
        if label is not None and label.kind is SymbolKind.CLOSE:
            out[tag[0]].add(LengthClass.from_int(tag[1]))
    return out


def short_reference_violation(m: Nfa, refs: Iterable[Variable], max_states: int = DEFAULT_STATE_CAP) -> str | None:
    """A witness that some referenced variable in ``refs`` expands to < 2 letters."""
    _require_ref_language(m)
    ref_set = set(refs)
    nodes, order, edges, final_nodes = _class_product(m, max_states)
    alive = _coreachable_nodes(len(nodes), edges, final_nodes)
    fwd: list[list[tuple[ExtSymbol | None, int]]] = [[] for _ in range(len(nodes))]
    for src, label, dst, _ in edges:
        fwd[src].append((label, dst))
    for src, label, dst, tag in edges:
        if label is None or label.kind is not SymbolKind.REF or tag is None:
            continue
        x, c = tag
        if x not in ref_set or c >= 2 or dst not in alive:
            continue
        prefix = _bfs_word(fwd, 0, src)
        suffix = _bfs_word(fwd, dst, None, targets=final_nodes)
        if prefix is None or suffix is None:
            continue
        w = tuple(prefix) + (label,) + tuple(suffix)
        return f"referenced variable {x!r} can expand to fewer than two letters: {format_word(w)}"
    return None


def _bfs_word(adj, start: int, target: int | None, targets: set[int] | None = None) -> list[ExtSymbol] | None:
    parent: dict[int, tuple[int | None, ExtSymbol | None]] = {start: (None, None)}
    queue = deque([start])
    goal = (lambda n: n == target) if target is not None else (lambda n: n in targets)
    while queue:
        n = queue.popleft()
        if goal(n):
            word: list[ExtSymbol] = []
            cur: int | None = n
            while cur is not None:
                prev, sym = parent[cur]
                if sym is not None:
                    word.append(sym)
                cur = prev
            word.reverse()
            return word
        for sym, nxt in adj[n]:
            if nxt not in parent:
                parent[nxt] = (n, sym)
                queue.append(nxt)
    return None
