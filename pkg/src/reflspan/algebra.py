"""Core-expression side: relational operators, the block-split construction,
quasi-disjoint normal form, and the compilers between core expressions and
back-reference automata.

A core expression is an automaton denoting a marker-disciplined language (no
references) together with string-equality selection classes, a span-fusion
plan, and a projection set; evaluation applies them innermost-first in that
order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable

from .automaton import Nfa, NfaBuilder, reduce_nfa, trim
from .classify import (
    Pattern,
    _any,
    _is,
    _non_marker,
    match_shortest,
    reference_bound,
    subword_marked_witness,
)
from .errors import AlphabetMismatchError, PreconditionError, ResourceLimitError
from .evaluate import evaluate
from .spans import (
    SpanRelation,
    SpanTuple,
    SymbolKind,
    ValidOrder,
    Variable,
    close_marker,
    fuse_all,
    open_marker,
    ref,
    term,
)
from .transform import remove_eps_references, reorder_markers_unguarded
from .words import format_word, spt, text_of, wrd

DEFAULT_COMPILER_STATE_CAP = 500_000


def _require_subword_marked(m: Nfa) -> None:
    w = subword_marked_witness(m)
    if w is not None:
        raise PreconditionError("language is not subword-marked", format_word(w))
    if any(label is not None and label.kind is SymbolKind.REF for _, label, _ in m.transitions):
        raise PreconditionError("core-side automata must not carry reference transitions")


# -- relation algebra ----------------------------------------------------------------


def rel_union(r1: SpanRelation, r2: SpanRelation) -> SpanRelation:
    if r1.doc_len != r2.doc_len:
        raise PreconditionError("union requires relations over the same document")
    return SpanRelation.of(set(r1.tuples) | set(r2.tuples), r1.variables | r2.variables, r1.doc_len)


def rel_join(r1: SpanRelation, r2: SpanRelation) -> SpanRelation:
    """Natural join: merge compatible tuples (equal on shared defined variables)."""
    if r1.doc_len != r2.doc_len:
        raise PreconditionError("join requires relations over the same document")
    out = set()
    for t1 in r1.tuples:
        d1 = t1.as_dict()
        for t2 in r2.tuples:
            d2 = t2.as_dict()
            if all(d1[v] == d2[v] for v in d1.keys() & d2.keys()):
                out.add(SpanTuple.of({**d1, **d2}))
    return SpanRelation.of(out, r1.variables | r2.variables, r1.doc_len)


def rel_project(r: SpanRelation, keep: Iterable[Variable]) -> SpanRelation:
    keep_set = frozenset(keep)
    return SpanRelation.of({t.restrict(keep_set) for t in r.tuples}, r.variables & keep_set, r.doc_len)


def rel_select_eq(r: SpanRelation, group: Iterable[Variable], text: str) -> SpanRelation:
    """Keep tuples whose defined variables in the group all bind equal values."""
    if len(text) != r.doc_len:
        raise PreconditionError("selection requires the document the relation was computed on")
    group_set = frozenset(group)
    out = set()
    for t in r.tuples:
        values = {s.value_of(text) for v, s in t if v in group_set}
        if len(values) <= 1:
            out.add(t)
    return SpanRelation.of(out, r.variables, r.doc_len)


def fuse_relation(
    r: SpanRelation, plan: Iterable[tuple[Iterable[Variable], Variable]]
) -> SpanRelation:
    """Replace each source group by one column holding the fused span.

    All groups read the original tuple, so a variable may feed several groups;
    targets must be pairwise distinct and either fresh or a member of some
    source group.
    """
    groups = [(frozenset(srcs), tgt) for srcs, tgt in plan]
    targets = [tgt for _, tgt in groups]
    if len(set(targets)) != len(targets):
        raise PreconditionError("fusion targets must be pairwise distinct")
    consumed = frozenset().union(*(srcs for srcs, _ in groups)) if groups else frozenset()
    kept = r.variables - consumed
    for _, tgt in groups:
        if tgt in kept:
            raise PreconditionError(f"fusion target {tgt!r} collides with a surviving column")
    out = set()
    for t in r.tuples:
        d = t.as_dict()
        merged = {v: s for v, s in d.items() if v not in consumed}
        for srcs, tgt in groups:
            fused = fuse_all(d.get(v) for v in srcs)
            if fused is not None:
                merged[tgt] = fused
        out.add(SpanTuple.of(merged))
    return SpanRelation.of(out, kept | frozenset(targets), r.doc_len)


# -- core expressions ----------------------------------------------------------------


@dataclass(frozen=True)
class CoreExpr:
    """Selection classes, fusion plan, and projection over a regular spanner."""

    nfa: Nfa
    select: tuple[frozenset[Variable], ...] = ()
    fuse: tuple[tuple[frozenset[Variable], Variable], ...] = ()
    project: frozenset[Variable] | None = None  # None keeps every column

    def __post_init__(self) -> None:
        seen: set[Variable] = set()
        for group in self.select:
            if group & seen:
                raise PreconditionError("selection classes must be pairwise disjoint")
            seen |= group
            if not group <= self.nfa.vars:
                raise PreconditionError("selection class mentions undeclared variables")

    def projection(self) -> frozenset[Variable]:
        if self.project is None:
            return frozenset(self.nfa.vars) if not self.fuse else self._post_fuse_vars()
        return self.project

    def _post_fuse_vars(self) -> frozenset[Variable]:
        consumed = frozenset().union(*(srcs for srcs, _ in self.fuse)) if self.fuse else frozenset()
        return (self.nfa.vars - consumed) | frozenset(tgt for _, tgt in self.fuse)


def eval_core(e: CoreExpr, w: str) -> SpanRelation:
    """Evaluate the underlying automaton, then selections, fusion, projection."""
    _require_subword_marked(e.nfa)
    r = evaluate(e.nfa, w)
    for group in e.select:
        r = rel_select_eq(r, group, w)
    if e.fuse:
        r = fuse_relation(r, e.fuse)
    return rel_project(r, e.projection())


# -- automaton-level union and projection ---------------------------------------------


def nfa_union(m1: Nfa, m2: Nfa) -> Nfa:
    if not m1.same_alphabet(m2):
        raise AlphabetMismatchError("union requires identical alphabet declarations")
    builder = NfaBuilder(m1.sigma, m1.vars)
    start = builder.add_state("u0")
    offset1 = len(builder._names)
    for q in range(m1.n_states):
        builder.add_state(f"a{m1.state_name(q)}")
    offset2 = len(builder._names)
    for q in range(m2.n_states):
        builder.add_state(f"b{m2.state_name(q)}")
    for src, label, dst in m1.transitions:
        builder.add_edge(src + offset1, label, dst + offset1)
    for src, label, dst in m2.transitions:
        builder.add_edge(src + offset2, label, dst + offset2)
    builder.add_edge(start, None, m1.initial + offset1)
    builder.add_edge(start, None, m2.initial + offset2)
    finals = {q + offset1 for q in m1.finals} | {q + offset2 for q in m2.finals}
    return builder.build(start, finals)


def nfa_project(m: Nfa, keep: Iterable[Variable]) -> Nfa:
    """Silence the markers of dropped variables."""
    keep_set = frozenset(keep)
    if not keep_set <= m.vars:
        raise PreconditionError("projection set mentions undeclared variables")
    builder = NfaBuilder(m.sigma, keep_set)
    for q in range(m.n_states):
        builder.add_state(m.state_name(q))
    for src, label, dst in m.transitions:
        if label is not None and label.kind is SymbolKind.REF:
            raise PreconditionError("cannot project an automaton with reference transitions")
        if label is not None and label.is_marker and label.value not in keep_set:
            builder.add_edge(src, None, dst)
        else:
            builder.add_edge(src, label, dst)
    return builder.build(m.initial, m.finals)


# -- block split and quasi-disjoint normal form ----------------------------------------


def split_variable_names(existing: Iterable[Variable], x: Variable, mcount: int) -> list[Variable]:
    """Deterministic fresh names for the split blocks of ``x``."""
    taken = set(existing)
    sep = "_"
    while any(f"{x}{sep}{j}" in taken for j in range(1, mcount + 1)):
        sep += "_"
    return [f"{x}{sep}{j}" for j in range(1, mcount + 1)]


def split(m: Nfa, x: Variable, mcount: int | None = None) -> Nfa:
    """Replace the region of ``x`` by ``mcount`` consecutive sub-captures.

    Every block holds markers of other variables only at its edges (shape:
    markers, terminals, markers), which forces the block variables to be
    quasi-disjoint with everything else while the fused blocks reproduce the
    original span.
    """
    _require_subword_marked(m)
    if x not in m.vars:
        return m
    if mcount is None:
        mcount = len(m.vars) ** 2
    if mcount < 1:
        raise PreconditionError("split width must be at least 1")
    names = split_variable_names(m.vars, x, mcount)
    new_vars = (m.vars - {x}) | set(names)
    builder = NfaBuilder(m.sigma, new_vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            q = builder.add_state()
            index[key] = q
        return q

    start = ("out", m.initial)
    node(start)
    queue: deque[Hashable] = deque([start])
    seen = {start}

    def push(key: Hashable) -> int:
        q = node(key)
        if key not in seen:
            seen.add(key)
            queue.append(key)
        return q

    GAMMA_PRE, BODY, GAMMA_POST = 0, 1, 2
    ox, cx = open_marker(x), close_marker(x)
    finals: set[int] = set()
    while queue:
        key = queue.popleft()
        src = index[key]
        if key[0] == "out":
            q = key[1]
            if q in m.finals:
                finals.add(src)
            for label, dst in m._adj[q]:
                if label == ox:
                    builder.add_edge(src, open_marker(names[0]), push(("in", dst, 1, GAMMA_PRE)))
                elif label == cx:
                    continue
                else:
                    builder.add_edge(src, label, push(("out", dst)))
        elif key[0] == "gap":
            _, q, j = key
            builder.add_edge(src, open_marker(names[j]), push(("in", q, j + 1, GAMMA_PRE)))
            for label, dst in m._adj[q]:
                if label is None:
                    builder.add_edge(src, None, push(("gap", dst, j)))
        else:
            _, q, j, phase = key
            if j < mcount:  # insert an empty-block boundary at any point
                builder.add_edge(src, close_marker(names[j - 1]), push(("gap", q, j)))
            for label, dst in m._adj[q]:
                if label is None:
                    builder.add_edge(src, None, push(("in", dst, j, phase)))
                elif label == cx:
                    if j == mcount:
                        builder.add_edge(src, close_marker(names[j - 1]), push(("out", dst)))
                elif label == ox:
                    continue
                elif label.kind is SymbolKind.TERM:
                    if phase != GAMMA_POST:
                        builder.add_edge(src, label, push(("in", dst, j, BODY)))
                else:  # marker of another variable
                    nphase = GAMMA_PRE if phase == GAMMA_PRE else GAMMA_POST
                    builder.add_edge(src, label, push(("in", dst, j, nphase)))
    return builder.build(index[start], finals)


def quasi_disjoint_normal_form(e: CoreExpr) -> CoreExpr:
    """Split every variable into blocks so the regular part is quasi-disjoint.

    Selections are rewritten block-wise over the split variables; the fusion
    plan reassembles the original columns.  The relation denoted by the
    expression is unchanged.
    """
    if e.fuse:
        raise PreconditionError("normal form expects an expression without a fusion plan")
    _require_subword_marked(e.nfa)
    original = sorted(e.nfa.vars)
    mcount = len(original) ** 2
    n = e.nfa
    names: dict[Variable, list[Variable]] = {}
    for x in original:
        names[x] = split_variable_names(n.vars, x, mcount)
        n = trim(split(n, x, mcount))
    select: list[frozenset[Variable]] = []
    for group in e.select:
        for j in range(mcount):
            select.append(frozenset(names[x][j] for x in group))
    fuse = tuple((frozenset(names[x]), x) for x in original)
    project = e.project if e.project is not None else frozenset(original)
    return CoreExpr(nfa=n, select=tuple(select), fuse=fuse, project=project)


# -- overlap check ----------------------------------------------------------------------


def check_non_overlapping(e: CoreExpr) -> tuple[bool, tuple[str, SpanTuple] | None]:
    """No two selection variables may bind spans sharing a document position."""
    _require_subword_marked(e.nfa)
    selected = sorted(frozenset().union(*e.select)) if e.select else []
    for x in selected:
        for y in selected:
            if x == y:
                continue
            p = Pattern()
            s1 = p.state()
            s2 = p.state()
            hit = p.state(final=True)
            p.loop(p.initial, _any)
            p.edge(p.initial, _is(open_marker(x)), s1)
            p.loop(s1, lambda s, cx=close_marker(x): s != cx)
            p.edge(s1, _is(open_marker(y)), s2)
            p.loop(s2, lambda s, cx=close_marker(x), cy=close_marker(y): s not in (cx, cy))
            p.edge(s2, _non_marker, hit)
            p.loop(hit, _any)
            witness = match_shortest(e.nfa, p)
            if witness is not None:
                return False, (text_of(wrd(witness)), spt(witness))
    return True, None


# -- equality-to-reference compiler (core expression -> reference automaton) ------------


def _arrange_group_markers(m: Nfa, group: frozenset[Variable], state_cap: int) -> Nfa:
    """Reorder every maximal marker run into the shape the substitution needs.

    Each buffered run is re-emitted deterministically: closes of group
    definitions first, foreign markers next, open/close pairs of empty group
    definitions, then opens of group definitions whose content follows.  This
    keeps exactly one representative per word (marker reordering never changes
    the denoted relation) with group definitions holding terminals only.
    """

    def arranged(pending: frozenset) -> tuple:
        closes = sorted(
            (s for s in pending if s.kind is SymbolKind.CLOSE and s.value in group and open_marker(s.value) not in pending),
            key=ExtSymbol.sort_key,
        )
        foreign = sorted((s for s in pending if s.value not in group), key=ExtSymbol.sort_key)
        pairs: list = []
        for s in sorted(pending, key=ExtSymbol.sort_key):
            if s.kind is SymbolKind.OPEN and s.value in group and close_marker(s.value) in pending:
                pairs += [s, close_marker(s.value)]
        opens = sorted(
            (s for s in pending if s.kind is SymbolKind.OPEN and s.value in group and close_marker(s.value) not in pending),
            key=ExtSymbol.sort_key,
        )
        return tuple(closes + foreign + pairs + opens)

    builder = NfaBuilder(m.sigma, m.vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            if len(index) >= state_cap:
                raise ResourceLimitError(f"marker arrangement exceeded {state_cap} states")
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
        kind = key[0]
        src = index[key]
        if kind == "a":
            _, q, pending = key
            for label, dst in m._adj[q]:
                if label is None:
                    builder.add_edge(src, None, push(("a", dst, pending)))
                elif label.is_marker:
                    if label not in pending:
                        builder.add_edge(src, None, push(("a", dst, pending | {label})))
                else:
                    pass  # read from the flushed node
            builder.add_edge(src, None, push(("e", q, arranged(pending))))
        else:
            _, q, seq = key
            if seq:
                builder.add_edge(src, seq[0], push(("e", q, seq[1:])))
            else:
                if q in m.finals:
                    finals.add(src)
                for label, dst in m._adj[q]:
                    if label is not None and not label.is_marker:
                        builder.add_edge(src, label, push(("a", dst, frozenset())))
    return builder.build(index[start], finals)


def _nice_filter(m: Nfa, group: frozenset[Variable]) -> Nfa:
    """Keep only words whose group definitions contain terminals exclusively."""
    builder = NfaBuilder(m.sigma, m.vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            q = builder.add_state()
            index[key] = q
        return q

    start = (m.initial, None)
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
        q, inside = key
        src = index[key]
        if q in m.finals and inside is None:
            finals.add(src)
        for label, dst in m._adj[q]:
            if label is None:
                builder.add_edge(src, None, push((dst, inside)))
                continue
            if inside is None:
                if label.kind is SymbolKind.OPEN and label.value in group:
                    builder.add_edge(src, label, push((dst, label.value)))
                else:
                    builder.add_edge(src, label, push((dst, None)))
            else:
                if label.kind is SymbolKind.TERM:
                    builder.add_edge(src, label, push((dst, inside)))
                elif label.kind is SymbolKind.CLOSE and label.value == inside:
                    builder.add_edge(src, label, push((dst, None)))
                # any other marker or reference inside the definition: reject
    return builder.build(index[start], finals)


def _substitute_group(m: Nfa, group: frozenset[Variable], state_cap: int) -> Nfa:
    """Force equal definitions within the group and rewrite repeats as references.

    While reading the first group definition of a word, one transition
    *relation* per remaining group variable tracks, for every candidate entry
    state, where reading the same content could lead; each later definition is
    then replaced by a single reference to the first variable, resolved
    against the recorded relation.  Tracking relations instead of guessed
    state pairs keeps the carried information per word content, not per pair.
    """
    group_vars = sorted(group)

    # states from which the matching close is reachable through terminal
    # content only; copies outside these sets can never finish a definition
    def content_region(y: Variable) -> frozenset[int]:
        back: list[list[int]] = [[] for _ in range(m.n_states)]
        for src, label, dst in m.transitions:
            if label is None or label.kind is SymbolKind.TERM:
                back[dst].append(src)
        seeds = {src for src, label, _ in m.transitions
                 if label is not None and label.kind is SymbolKind.CLOSE and label.value == y}
        seen = set(seeds)
        work = list(seeds)
        while work:
            q = work.pop()
            for p in back[q]:
                if p not in seen:
                    seen.add(p)
                    work.append(p)
        return frozenset(seen)

    region = {y: content_region(y) for y in group_vars}
    eps_fwd: list[list[int]] = [[] for _ in range(m.n_states)]
    term_fwd: list[dict[object, list[int]]] = [dict() for _ in range(m.n_states)]
    for src, label, dst in m.transitions:
        if label is None:
            eps_fwd[src].append(dst)
        elif label.kind is SymbolKind.TERM:
            term_fwd[src].setdefault(label, []).append(dst)

    def right_closure(pairs: frozenset[tuple[int, int]], allowed: frozenset[int]) -> frozenset[tuple[int, int]]:
        out = set(pairs)
        work = list(pairs)
        while work:
            s, t = work.pop()
            for t2 in eps_fwd[t]:
                if t2 in allowed and (s, t2) not in out:
                    out.add((s, t2))
                    work.append((s, t2))
        return frozenset(out)

    def relation_step(pairs: frozenset[tuple[int, int]], label, allowed: frozenset[int]) -> frozenset[tuple[int, int]]:
        stepped = {
            (s, t2)
            for s, t in pairs
            for t2 in term_fwd[t].get(label, ())
            if t2 in allowed
        }
        return right_closure(frozenset(stepped), allowed)

    initial_rel: dict[Variable, frozenset[tuple[int, int]]] = {}
    for y in group_vars:
        starts = {
            dst
            for _, label, dst in m.transitions
            if label is not None and label.kind is SymbolKind.OPEN and label.value == y and dst in region[y]
        }
        initial_rel[y] = right_closure(frozenset((s, s) for s in starts), region[y])

    builder = NfaBuilder(m.sigma, m.vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            if len(index) >= state_cap:
                raise ResourceLimitError(f"equality compiler exceeded {state_cap} states")
            q = builder.add_state()
            index[key] = q
        return q

    start = ("pre", m.initial)
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
        src = index[key]
        kind = key[0]
        if kind == "pre":
            q = key[1]
            if q in m.finals:
                finals.add(src)
            for label, dst in m._adj[q]:
                if label is not None and label.kind is SymbolKind.OPEN and label.value in group:
                    x1 = label.value
                    if dst not in region[x1]:
                        continue
                    others = tuple(y for y in group_vars if y != x1)
                    rels = tuple(initial_rel[y] for y in others)
                    builder.add_edge(src, label, push(("lock", x1, others, rels, dst)))
                else:
                    builder.add_edge(src, label, push(("pre", dst)))
        elif kind == "lock":
            _, x1, others, rels, cur = key
            for label, dst in m._adj[cur]:
                if label is None:
                    if dst in region[x1]:
                        builder.add_edge(src, None, push(("lock", x1, others, rels, dst)))
                elif label.kind is SymbolKind.TERM:
                    if dst not in region[x1]:
                        continue
                    rels2 = tuple(relation_step(r, label, region[y]) for r, y in zip(rels, others))
                    builder.add_edge(src, label, push(("lock", x1, others, rels2, dst)))
                elif label.kind is SymbolKind.CLOSE and label.value == x1:
                    pending = frozenset((y, r) for y, r in zip(others, rels))
                    builder.add_edge(src, label, push(("main", dst, x1, pending)))
        elif kind == "main":
            _, q, x1, pending = key
            if q in m.finals:
                finals.add(src)  # unconsumed entries mean those variables stay undefined
            pending_map = dict(pending)
            for label, dst in m._adj[q]:
                if label is None:
                    builder.add_edge(src, None, push(("main", dst, x1, pending)))
                    continue
                if label.kind is SymbolKind.OPEN and label.value in group:
                    rel = pending_map.get(label.value)
                    if rel is not None:
                        exits = frozenset(t for s, t in rel if s == dst)
                        if exits:
                            rest = pending - {(label.value, rel)}
                            builder.add_edge(
                                src, label, push(("refsite", x1, label.value, exits, rest))
                            )
                    continue  # group definitions outside the plan: reject
                if label.kind is SymbolKind.CLOSE and label.value in group:
                    continue  # group closes are consumed at reference sites only
                builder.add_edge(src, label, push(("main", dst, x1, pending)))
        elif kind == "refsite":
            _, x1, y, exits, pending = key
            builder.add_edge(src, ref(x1), push(("postref", x1, y, exits, pending)))
        else:  # postref: leave the definition through its original close
            _, x1, y, exits, pending = key
            for t_state in exits:
                for label, dst in m._adj[t_state]:
                    if label is not None and label.kind is SymbolKind.CLOSE and label.value == y:
                        builder.add_edge(src, label, push(("main", dst, x1, pending)))
    return builder.build(index[start], finals)


def core_to_refl(
    e: CoreExpr,
    max_class_size: int = 3,
    max_input_states: int | None = 10,
    state_cap: int = DEFAULT_COMPILER_STATE_CAP,
) -> tuple[Nfa, tuple[tuple[frozenset[Variable], Variable], ...], frozenset[Variable]]:
    """Compile non-overlapping string-equality selections into references.

    Returns an automaton over the split variables plus the fusion plan and
    projection that reconstruct the expression's relation.
    """
    if e.fuse:
        raise PreconditionError("compiler expects an expression without a fusion plan")
    ok, witness = check_non_overlapping(e)
    if not ok:
        raise PreconditionError(
            f"selection variables overlap on document {witness[0]!r} with tuple {witness[1]}"
        )
    if max_input_states is not None and e.nfa.n_states > max_input_states:
        raise ResourceLimitError(
            f"compiler input cap: {e.nfa.n_states} states exceed {max_input_states} (pass max_input_states=None to lift)"
        )
    if any(len(group) > max_class_size for group in e.select):
        raise ResourceLimitError(f"compiler class cap: selection classes wider than {max_class_size}")
    qd = quasi_disjoint_normal_form(e)
    n = reduce_nfa(qd.nfa)
    for group in qd.select:
        # empty-expanding references first: they could merge marker runs and
        # disturb the arrangement otherwise
        n = reduce_nfa(remove_eps_references(n, state_cap))
        n = reduce_nfa(_arrange_group_markers(n, group, state_cap))
        n = reduce_nfa(_nice_filter(n, group))
        n = reduce_nfa(_substitute_group(n, group, state_cap))
    return n, qd.fuse, qd.project if qd.project is not None else frozenset(e.nfa.vars)


# -- reference-to-equality compiler (reference automaton -> core expression) ------------


def refl_to_core(m: Nfa, max_states: int = DEFAULT_COMPILER_STATE_CAP) -> CoreExpr:
    """Rewrite bounded references into guessed captures checked by selections."""
    k = reference_bound(m)
    if k is None:
        raise PreconditionError("references are unbounded; the rewrite needs a reference bound")
    t = trim(m)
    ref_vars = sorted({label.value for _, label, _ in t.transitions if label is not None and label.kind is SymbolKind.REF})
    if not ref_vars:
        return CoreExpr(nfa=t, select=(), fuse=(), project=frozenset(m.vars))
    fresh: dict[Variable, list[Variable]] = {}
    taken = set(m.vars)
    for x in ref_vars:
        sep = "_ref"
        while any(f"{x}{sep}{j}" in taken for j in range(1, k + 1)):
            sep += "_"
        fresh[x] = [f"{x}{sep}{j}" for j in range(1, k + 1)]
        taken |= set(fresh[x])
    new_vars = frozenset(taken)
    builder = NfaBuilder(t.sigma, new_vars)
    index: dict[Hashable, int] = {}

    def node(key: Hashable) -> int:
        q = index.get(key)
        if q is None:
            if len(index) >= max_states:
                raise ResourceLimitError(f"reference rewrite exceeded {max_states} states")
            q = builder.add_state()
            index[key] = q
        return q

    zero = tuple(0 for _ in ref_vars)
    vpos = {x: i for i, x in enumerate(ref_vars)}
    start = ("s", t.initial, zero)
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
        src = index[key]
        if key[0] == "s":
            _, q, counts = key
            if q in t.finals:
                finals.add(src)
            for label, dst in t._adj[q]:
                if label is not None and label.kind is SymbolKind.REF:
                    i = vpos[label.value]
                    j = counts[i] + 1
                    if j > k:
                        continue
                    counts2 = counts[:i] + (j,) + counts[i + 1 :]
                    y = fresh[label.value][j - 1]
                    guess = ("g", dst, counts2, y)
                    builder.add_edge(src, open_marker(y), push(guess))
                else:
                    builder.add_edge(src, label, push(("s", dst, counts)))
        else:  # guessing loop: any terminal content, then close the fresh capture
            _, dst, counts, y = key
            for ch in sorted(t.sigma):
                builder.add_edge(src, term(ch), src)
            builder.add_edge(src, close_marker(y), push(("s", dst, counts)))
    nfa = builder.build(index[start], finals)
    select = tuple(frozenset({x} | set(fresh[x])) for x in ref_vars)
    return CoreExpr(nfa=nfa, select=select, fuse=(), project=frozenset(m.vars))
