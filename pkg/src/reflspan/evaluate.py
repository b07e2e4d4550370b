"""Query evaluation for back-reference spanner automata.

Three entry points: ``test_tuple`` decides membership of one span-tuple (with
``general``, ``functional`` and ``normalized`` algorithm variants),
``evaluate`` materializes the whole relation by a memoized configuration
search, and ``nonempty`` is the same search with early exit.
``oracle_evaluate`` is an independent brute-force pipeline (enumeration plus
word-level expansion) kept deliberately separate so the two routes can check
each other.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Hashable, Iterable, Sequence

from .automaton import Nfa, enumerate_words, trim
from .classify import (
    is_normalized_automaton,
    ref_language_witness,
    tuple_property_witnesses,
)
from .errors import PreconditionError, ResourceLimitError
from .spans import (
    ExtSymbol,
    Span,
    SpanRelation,
    SpanTuple,
    SymbolKind,
    ValidOrder,
    Variable,
    close_marker,
    open_marker,
)
from .transform import remove_eps_references
from .words import deref, format_word, is_ref_word, marked_with, spt, text_of, wrd

DEFAULT_CONFIG_CAP = 500_000
GENERAL = "general"
FUNCTIONAL = "functional"
NORMALIZED = "normalized"


def check_document(text: str, sigma: frozenset[str]) -> None:
    for i, ch in enumerate(text):
        if ch not in sigma:
            raise PreconditionError(f"document character {ch!r} at position {i + 1} is not in the alphabet")


def _require_ref_language(m: Nfa) -> None:
    w = ref_language_witness(m)
    if w is not None:
        raise PreconditionError("language is not a ref-language", format_word(w))


# -- longest common extension ------------------------------------------------------


@dataclass(frozen=True)
class Lce:
    """Suffix array + LCP array + sparse-table range minimum over a fixed word.

    Built in O(n log^2 n), answers longest-common-extension queries between
    two suffixes in O(1).
    """

    length: int
    rank: tuple[int, ...]
    lcp: tuple[int, ...]
    table: tuple[tuple[int, ...], ...]
    logs: tuple[int, ...]


def build_lce(u: Sequence[Hashable]) -> Lce:
    n = len(u)
    if n == 0:
        return Lce(0, (), (), (), (0,))
    codes = {s: i for i, s in enumerate(sorted(set(u), key=repr))}
    rank = [codes[s] for s in u]
    k = 1
    order = list(range(n))
    while True:
        key = lambda i: (rank[i], rank[i + k] if i + k < n else -1)
        order.sort(key=key)
        new_rank = [0] * n
        for idx in range(1, n):
            new_rank[order[idx]] = new_rank[order[idx - 1]] + (key(order[idx]) != key(order[idx - 1]))
        rank = new_rank
        if rank[order[-1]] == n - 1:
            break
        k *= 2
    sa = order
    # Kasai
    lcp = [0] * n  # lcp[r] = lcp of suffixes ranked r-1 and r (lcp[0] unused)
    h = 0
    pos_of = rank
    for i in range(n):
        r = pos_of[i]
        if r == 0:
            h = 0
            continue
        j = sa[r - 1]
        if h:
            h -= 1
        while i + h < n and j + h < n and u[i + h] == u[j + h]:
            h += 1
        lcp[r] = h
    logs = [0] * (n + 1)
    for i in range(2, n + 1):
        logs[i] = logs[i // 2] + 1
    table: list[tuple[int, ...]] = [tuple(lcp)]
    span = 1
    while 2 * span <= n:
        prev = table[-1]
        table.append(tuple(min(prev[i], prev[i + span]) for i in range(n - 2 * span + 1)))
        span *= 2
    return Lce(n, tuple(rank), tuple(lcp), tuple(table), tuple(logs))


def lce_query(l: Lce, i: int, j: int) -> int:
    """Longest common prefix length of the suffixes starting at 1-based i and j."""
    if not (1 <= i <= l.length and 1 <= j <= l.length):
        raise PreconditionError(f"lce positions ({i},{j}) out of range 1..{l.length}")
    if i == j:
        return l.length - i + 1
    ri, rj = l.rank[i - 1], l.rank[j - 1]
    if ri > rj:
        ri, rj = rj, ri
    lo, hi = ri + 1, rj  # min over lcp[lo..hi]
    k = l.logs[hi - lo + 1]
    return min(l.table[k][lo], l.table[k][hi - (1 << k) + 1])


# -- configuration search (evaluate / nonempty) --------------------------------------


@lru_cache(maxsize=1024)
def _live_refs(m: Nfa) -> tuple[frozenset[Variable], ...]:
    """Per state, the variables whose references are still reachable ahead."""
    live: list[set[Variable]] = [set() for _ in range(m.n_states)]
    back: list[list[int]] = [[] for _ in range(m.n_states)]
    queue: deque[int] = deque()
    for src, label, dst in m.transitions:
        back[dst].append(src)
        if label is not None and label.kind is SymbolKind.REF:
            if label.value not in live[src]:
                live[src].add(label.value)
                queue.append(src)
    while queue:
        q = queue.popleft()
        for p in back[q]:
            if not live[q] <= live[p]:
                live[p] |= live[q]
                queue.append(p)
    return tuple(frozenset(s) for s in live)


_UNOPENED = 0
_DEAD = 1  # closed and no reference reachable: binding already emitted


class _Search:
    def __init__(self, m: Nfa, w: str, max_configs: int):
        _require_ref_language(m)
        check_document(w, m.sigma)
        self.m = m
        self.w = w
        self.n = len(w)
        self.vars = sorted(m.vars)
        self.vidx = {x: i for i, x in enumerate(self.vars)}
        self.live = _live_refs(m)
        self.max_configs = max_configs

    def _canon(self, q: int, slots: tuple) -> tuple[tuple, frozenset]:
        lv = self.live[q]
        dropped = []
        out = list(slots)
        for i, x in enumerate(self.vars):
            s = out[i]
            if type(s) is tuple and s[0] == "c" and x not in lv:
                dropped.append((x, s[1], s[2]))
                out[i] = _DEAD
        return tuple(out), frozenset(dropped)

    def _null_reach(self, q: int, slots: tuple) -> list[tuple[int, tuple, frozenset]]:
        """States reachable by silent moves and empty-span references, with drops."""
        start_slots, d0 = self._canon(q, slots)
        seen = {(q, start_slots)}
        out = [(q, start_slots, d0)]
        queue = deque([(q, start_slots)])
        while queue:
            q1, s1 = queue.popleft()
            for label, dst in self.m._adj[q1]:
                if label is None:
                    pass
                elif label.kind is SymbolKind.REF:
                    slot = s1[self.vidx[label.value]]
                    if not (type(slot) is tuple and slot[0] == "c" and slot[1] == slot[2]):
                        continue
                else:
                    continue
                s2, _ = self._canon(dst, s1)
                if (dst, s2) not in seen:
                    seen.add((dst, s2))
                    base = {(x, sl[1], sl[2]) for x, sl in zip(self.vars, slots) if type(sl) is tuple and sl[0] == "c"}
                    now = {(x, sl[1], sl[2]) for x, sl in zip(self.vars, s2) if type(sl) is tuple and sl[0] == "c"}
                    out.append((dst, s2, frozenset(base - now)))
                    queue.append((dst, s2))
        return out

    def _expand(self, cfg: tuple) -> tuple[set[frozenset], list[tuple[tuple, frozenset]]]:
        """Direct completions at ``cfg`` plus advancing successor configurations."""
        q, pos, slots = cfg
        completions: set[frozenset] = set()
        children: list[tuple[tuple, frozenset]] = []
        w, n, vidx = self.w, self.n, self.vidx
        for q2, s2, d2 in self._null_reach(q, slots):
            if q2 in self.m.finals and pos == n + 1:
                if not any(type(s) is tuple and s[0] == "o" for s in s2):
                    closed = frozenset(
                        (x, s[1], s[2]) for x, s in zip(self.vars, s2) if type(s) is tuple and s[0] == "c"
                    )
                    completions.add(closed | d2)
            for label, dst in self.m._adj[q2]:
                if label is None:
                    continue
                kind = label.kind
                if kind is SymbolKind.TERM:
                    if pos <= n and w[pos - 1] == label.value:
                        s3, pos3 = s2, pos + 1
                    else:
                        continue
                elif kind is SymbolKind.OPEN:
                    i = vidx[label.value]
                    if s2[i] is not _UNOPENED:
                        continue
                    s3 = s2[:i] + (("o", pos),) + s2[i + 1 :]
                    pos3 = pos
                elif kind is SymbolKind.CLOSE:
                    i = vidx[label.value]
                    slot = s2[i]
                    if not (type(slot) is tuple and slot[0] == "o"):
                        continue
                    s3 = s2[:i] + (("c", slot[1], pos),) + s2[i + 1 :]
                    pos3 = pos
                else:  # non-empty reference (empty ones were silent moves)
                    slot = s2[vidx[label.value]]
                    if not (type(slot) is tuple and slot[0] == "c" and slot[2] > slot[1]):
                        continue
                    lo, hi = slot[1], slot[2]
                    length = hi - lo
                    if pos + length > n + 1 or w[pos - 1 : pos - 1 + length] != w[lo - 1 : hi - 1]:
                        continue
                    s3, pos3 = s2, pos + length
                s4, d3 = self._canon(dst, s3)
                children.append(((dst, pos3, s4), d2 | d3))
        return completions, children

    def initial_config(self) -> tuple:
        slots = (_UNOPENED,) * len(self.vars)
        s0, d0 = self._canon(self.m.initial, slots)
        assert not d0
        return (self.m.initial, 1, s0)

    def run_evaluate(self) -> set[frozenset]:
        root = self.initial_config()
        memo: dict[tuple, object] = {}
        expansions: dict[tuple, tuple[set[frozenset], list[tuple[tuple, frozenset]]]] = {}
        in_progress = object()
        stack = [root]
        while stack:
            cfg = stack[-1]
            cached = memo.get(cfg)
            if cached is not None and cached is not in_progress:
                stack.pop()
                continue
            if cached is None:
                memo[cfg] = in_progress
                if len(memo) > self.max_configs:
                    raise ResourceLimitError(f"evaluate exceeded {self.max_configs} configurations")
                expansions[cfg] = self._expand(cfg)
                pending = [c for c, _ in expansions[cfg][1] if c not in memo]
                if pending:
                    stack.extend(pending)
                    continue
            completions, children = expansions.pop(cfg)
            result = set(completions)
            for child, drops in children:
                sub = memo[child]
                assert sub is not in_progress, "advancing edges cannot form cycles"
                for c in sub:  # type: ignore[union-attr]
                    result.add(c | drops)
            memo[cfg] = frozenset(result)
            stack.pop()
        return set(memo[root])  # type: ignore[arg-type]

    def run_nonempty(self) -> bool:
        root = self.initial_config()
        seen = {root}
        stack = [root]
        while stack:
            cfg = stack.pop()
            if len(seen) > self.max_configs:
                raise ResourceLimitError(f"nonempty exceeded {self.max_configs} configurations")
            completions, children = self._expand(cfg)
            if completions:
                return True
            for child, _ in children:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return False


def evaluate(m: Nfa, w: str, max_configs: int = DEFAULT_CONFIG_CAP) -> SpanRelation:
    """The complete relation of the spanner on document ``w``."""
    search = _Search(m, w, max_configs)
    completions = search.run_evaluate()
    tuples = {SpanTuple.of([(x, Span(lo, hi)) for x, lo, hi in binding]) for binding in completions}
    return SpanRelation.of(tuples, m.vars, len(w))


def nonempty(m: Nfa, w: str, max_configs: int = DEFAULT_CONFIG_CAP) -> bool:
    """Whether the relation on ``w`` is non-empty (early-exit search)."""
    return _Search(m, w, max_configs).run_nonempty()


def oracle_evaluate(
    m: Nfa,
    w: str,
    max_doc: int = 8,
    max_vars: int = 4,
    max_words: int = 2_000_000,
) -> SpanRelation:
    """Brute-force reference relation: enumerate, expand word-wise, filter.

    After rewriting away empty-expanding references, every accepted word that
    can expand to ``w`` has at most 2|w| + 2|X| symbols, so enumeration up to
    that bound is exhaustive.
    """
    _require_ref_language(m)
    check_document(w, m.sigma)
    if len(w) > max_doc or len(m.vars) > max_vars:
        raise ResourceLimitError(f"oracle guard: |w| <= {max_doc} and |X| <= {max_vars} required")
    rewritten = remove_eps_references(m)
    bound = 2 * len(w) + 2 * len(m.vars)
    words = enumerate_words(rewritten, bound)
    if len(words) > max_words:
        raise ResourceLimitError(f"oracle enumeration exceeded {max_words} words")
    tuples = set()
    for v in words:
        if not is_ref_word(v):
            continue
        expanded = deref(v)
        if text_of(wrd(expanded)) == w:
            tuples.add(spt(expanded))
    return SpanRelation.of(tuples, m.vars, len(w))


# -- tuple testing -------------------------------------------------------------------


@lru_cache(maxsize=1024)
def _trimmed(m: Nfa) -> Nfa:
    return trim(m)


@lru_cache(maxsize=65536)
def _gamma_perm_pairs(m: Nfa, markers: frozenset[ExtSymbol]) -> frozenset[tuple[int, int]]:
    """State pairs connected by a path reading each marker of the set exactly once."""
    from itertools import permutations

    pairs: set[tuple[int, int]] = set()
    for perm in permutations(sorted(markers, key=ExtSymbol.sort_key)):
        for q in range(m.n_states):
            states = m.eps_closure([q])
            for sym in perm:
                states = m.moves(states, sym)
                if not states:
                    break
            for q2 in states:
                pairs.add((q, q2))
    return frozenset(pairs)


def _find_gamma_word(m: Nfa, q: int, q2: int, markers: frozenset[ExtSymbol]) -> tuple[ExtSymbol, ...] | None:
    from itertools import permutations

    for perm in permutations(sorted(markers, key=ExtSymbol.sort_key)):
        states = m.eps_closure([q])
        for sym in perm:
            states = m.moves(states, sym)
            if not states:
                break
        else:
            if q2 in states:
                return perm
    return None


@lru_cache(maxsize=1024)
def _gamma_reach(m: Nfa) -> tuple[frozenset[int], ...]:
    """Per state, the states reachable by marker and silent transitions only."""
    out = []
    for q in range(m.n_states):
        seen = {q}
        stack = [q]
        while stack:
            p = stack.pop()
            for label, dst in m._adj[p]:
                if (label is None or label.is_marker) and dst not in seen:
                    seen.add(dst)
                    stack.append(dst)
        out.append(frozenset(seen))
    return tuple(out)


@lru_cache(maxsize=1024)
def _marker_config_table(m: Nfa) -> tuple[dict[Variable, str], ...]:
    """Per state of a trimmed automaton, the open/closed status each variable
    must have whenever a run visits the state."""
    after: dict[ExtSymbol, set[int]] = {}
    for x in m.vars:
        for sym in (open_marker(x), close_marker(x)):
            starts = {dst for _, label, dst in m.transitions if label == sym}
            seen = set(starts)
            stack = list(starts)
            while stack:
                q = stack.pop()
                for _, dst in m._adj[q]:
                    if dst not in seen:
                        seen.add(dst)
                        stack.append(dst)
            after[sym] = seen
    table: list[dict[Variable, str]] = []
    for q in range(m.n_states):
        cfg: dict[Variable, str] = {}
        for x in m.vars:
            if q in after[close_marker(x)]:
                cfg[x] = "closed"
            elif q in after[open_marker(x)]:
                cfg[x] = "open"
            else:
                cfg[x] = "blank"
        table.append(cfg)
    return tuple(table)


def _marker_set_function(m: Nfa, q: int, q2: int) -> frozenset[ExtSymbol] | None:
    """The unique marker set read on any marker-only path q -> q2 (trimmed, functional)."""
    table = _marker_config_table(m)
    out: set[ExtSymbol] = set()
    for x in m.vars:
        a, b = table[q][x], table[q2][x]
        if a == "closed":
            continue
        if a == "open":
            if b == "closed":
                out.add(close_marker(x))
        else:  # blank
            if b == "open":
                out.add(open_marker(x))
            elif b == "closed":
                out.add(open_marker(x))
                out.add(close_marker(x))
    return frozenset(out)


def _boundary_sets(t: SpanTuple, n: int) -> dict[int, set[ExtSymbol]]:
    at: dict[int, set[ExtSymbol]] = {}
    for x, s in t:
        at.setdefault(s.lo, set()).add(open_marker(x))
        at.setdefault(s.hi, set()).add(close_marker(x))
    return at


def _validate_tuple(m: Nfa, t: SpanTuple, n: int) -> None:
    for x, s in t:
        if x not in m.vars:
            raise PreconditionError(f"tuple binds variable {x!r} not declared by the spanner")
        if s.hi > n + 1:
            raise PreconditionError(f"span {s} exceeds document length {n}")


def test_tuple(
    m: Nfa,
    w: str,
    t: SpanTuple,
    mode: str = GENERAL,
    ord: ValidOrder | None = None,
    return_witness: bool = False,
):
    """Decide whether ``t`` belongs to the relation on ``w``.

    ``general`` handles any ref-language automaton; ``functional`` requires a
    functional spanner and replaces the brute-force marker-run search by the
    state-determined marker-set function; ``normalized`` requires the language
    to be normalized for ``ord`` and matches markers as plain letters.
    With ``return_witness`` the accepted word realizing ``t`` is reconstructed
    and returned alongside the verdict.
    """
    _require_ref_language(m)
    check_document(w, m.sigma)
    n = len(w)
    _validate_tuple(m, t, n)
    if mode == NORMALIZED:
        if ord is None:
            raise PreconditionError("normalized mode requires a marker order")
        if ord.variables != m.vars:
            raise PreconditionError("order must cover exactly the declared variables")
        if not is_normalized_automaton(m, ord):
            raise PreconditionError("language is not normalized for the given order")
        return _test_normalized(m, w, t, ord, return_witness)
    if mode == FUNCTIONAL:
        witness = tuple_property_witnesses(m)["functional"]
        if witness is not None:
            raise PreconditionError("spanner is not functional", format_word(witness))
        return _test_setwise(trim(m), w, t, functional=True, return_witness=return_witness)
    if mode == GENERAL:
        return _test_setwise(m, w, t, functional=False, return_witness=return_witness)
    raise PreconditionError(f"unknown mode {mode!r}")


def _test_setwise(m: Nfa, w: str, t: SpanTuple, functional: bool, return_witness: bool):
    """Shared graph search for the general and functional variants.

    The document is interleaved with one set-letter per marker boundary; edges
    over a set-letter are resolved either by brute-force permutation
    reachability (general) or by the marker-set function (functional).
    """
    n = len(w)
    at = _boundary_sets(t, n)
    # annotated word: list of ('set', frozenset) and ('term', ch) entries
    tape: list[tuple[str, object]] = []
    positions_in_w: list[int] = []  # underlying document position of each tape index
    for i in range(1, n + 2):
        if i in at:
            tape.append(("set", frozenset(at[i])))
            positions_in_w.append(i)
        if i <= n:
            tape.append(("term", w[i - 1]))
            positions_in_w.append(i)
    tape_len = len(tape)
    hat = ["#" if kind == "set" else ch for kind, ch in tape]
    lce = build_lce(tuple(w) + tuple(hat))

    gamma_reach = _gamma_reach(m) if functional else None
    spans = dict(t.bindings)

    def ref_edge_target(i: int, x: Variable) -> int | None:
        s = spans.get(x)
        if s is None:
            return None  # a word using x forces x into the tuple's domain
        length = len(s)
        if length == 0:
            return i
        if i > tape_len:
            return None
        if i + length > tape_len + 1:
            return None
        if lce_query(lce, s.lo, n + i) < length:
            return None
        return i + length

    start = (m.initial, 1)
    parent: dict[tuple[int, int], tuple[tuple[int, int] | None, tuple]] = {start: (None, ())}
    queue = deque([start])
    goal: tuple[int, int] | None = None
    while queue:
        node = queue.popleft()
        q, i = node
        if i == tape_len + 1 and q in m.finals:
            goal = node
            break
        entry = tape[i - 1] if i <= tape_len else None
        for label, dst in m._adj[q]:
            if label is None:
                nxt = (dst, i)
                if nxt not in parent:
                    parent[nxt] = (node, ())
                    queue.append(nxt)
            elif label.kind is SymbolKind.TERM:
                if entry is not None and entry[0] == "term" and entry[1] == label.value:
                    nxt = (dst, i + 1)
                    if nxt not in parent:
                        parent[nxt] = (node, (label,))
                        queue.append(nxt)
            elif label.kind is SymbolKind.REF:
                i2 = ref_edge_target(i, label.value)
                if i2 is not None:
                    nxt = (dst, i2)
                    if nxt not in parent:
                        parent[nxt] = (node, (label,))
                        queue.append(nxt)
        if entry is not None and entry[0] == "set":
            markers: frozenset[ExtSymbol] = entry[1]  # type: ignore[assignment]
            if functional:
                for q2 in gamma_reach[q]:  # type: ignore[index]
                    if _marker_set_function(m, q, q2) == markers:
                        nxt = (q2, i + 1)
                        if nxt not in parent:
                            parent[nxt] = (node, ("gamma", markers))
                            queue.append(nxt)
            else:
                for a, b in _gamma_perm_pairs(m, markers):
                    if a != q:
                        continue
                    nxt = (b, i + 1)
                    if nxt not in parent:
                        parent[nxt] = (node, ("gamma", markers))
                        queue.append(nxt)
    if goal is None:
        return (False, None) if return_witness else False
    if not return_witness:
        return True
    word: list[ExtSymbol] = []
    cur: tuple[int, int] | None = goal
    trail: list[tuple[tuple[int, int], tuple]] = []
    while cur is not None:
        prev, tag = parent[cur]
        trail.append((cur, tag))
        cur = prev
    trail.reverse()
    prev_node = None
    for node, tag in trail:
        if tag and tag[0] == "gamma":
            assert prev_node is not None
            found = _find_gamma_word(m, prev_node[0], node[0], tag[1])
            assert found is not None
            word.extend(found)
        elif tag:
            word.extend(tag)
        prev_node = node
    return True, tuple(word)


def _test_normalized(m: Nfa, w: str, t: SpanTuple, ord: ValidOrder, return_witness: bool):
    n = len(w)
    tape = marked_with(w, t, ord)
    hat = ["#" if s.is_marker else s.value for s in tape]
    lce = build_lce(tuple(w) + tuple(hat))
    spans = dict(t.bindings)
    tape_len = len(tape)

    def ref_edge_target(i: int, x: Variable) -> int | None:
        s = spans.get(x)
        if s is None:
            return None
        length = len(s)
        if length == 0:
            return i
        if i + length > tape_len + 1:
            return None
        if lce_query(lce, s.lo, n + i) < length:
            return None
        return i + length

    start = (m.initial, 1)
    parent: dict[tuple[int, int], tuple[tuple[int, int] | None, ExtSymbol | None]] = {start: (None, None)}
    queue = deque([start])
    goal: tuple[int, int] | None = None
    while queue:
        node = queue.popleft()
        q, i = node
        if i == tape_len + 1 and q in m.finals:
            goal = node
            break
        sym = tape[i - 1] if i <= tape_len else None
        for label, dst in m._adj[q]:
            if label is None:
                nxt = (dst, i)
                if nxt not in parent:
                    parent[nxt] = (node, None)
                    queue.append(nxt)
            elif label.kind is SymbolKind.REF:
                i2 = ref_edge_target(i, label.value)
                if i2 is not None:
                    nxt = (dst, i2)
                    if nxt not in parent:
                        parent[nxt] = (node, label)
                        queue.append(nxt)
            elif sym is not None and label == sym:
                nxt = (dst, i + 1)
                if nxt not in parent:
                    parent[nxt] = (node, label)
                    queue.append(nxt)
    if goal is None:
        return (False, None) if return_witness else False
    if not return_witness:
        return True
    word: list[ExtSymbol] = []
    cur: tuple[int, int] | None = goal
    while cur is not None:
        prev, sym = parent[cur]
        if sym is not None:
            word.append(sym)
        cur = prev
    return True, tuple(reversed(word))
