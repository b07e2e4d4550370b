"""Generic NFA over the extended alphabet.

Automata are immutable after construction; derived structures (adjacency,
epsilon closures) are computed on demand and cached, so queries are safe to
run concurrently on shared automata.  Transitions are stored canonically
sorted and de-duplicated, which makes structural equality and the textual
serialization below order-insensitive and round-trip exact.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .errors import AlphabetMismatchError, ParseError, ResourceLimitError
from .spans import ExtSymbol, SymbolKind, Variable, check_variable_name, close_marker, open_marker, ref, term

Label = ExtSymbol | None  # None is the silent transition
Transition = tuple[int, Label, int]

_KIND_RANK = {
    SymbolKind.TERM: 1,
    SymbolKind.OPEN: 2,
    SymbolKind.CLOSE: 3,
    SymbolKind.REF: 4,
}

DEFAULT_SUBSET_CAP = 10**6


def _label_key(label: Label) -> tuple[int, str]:
    if label is None:
        return (0, "")
    return (_KIND_RANK[label.kind], label.value)


@dataclass(frozen=True)
class Nfa:
    sigma: frozenset[str]
    vars: frozenset[Variable]
    n_states: int
    initial: int
    finals: frozenset[int]
    transitions: tuple[Transition, ...]
    state_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not (0 <= self.initial < self.n_states):
            raise ValueError("initial state out of range")
        if not all(0 <= q < self.n_states for q in self.finals):
            raise ValueError("final state out of range")
        for src, label, dst in self.transitions:
            if not (0 <= src < self.n_states and 0 <= dst < self.n_states):
                raise ValueError(f"transition endpoint out of range: {(src, dst)}")
            if label is not None:
                if label.kind is SymbolKind.TERM:
                    if label.value not in self.sigma:
                        raise ValueError(f"terminal {label.value!r} not in declared alphabet")
                elif label.value not in self.vars:
                    raise ValueError(f"variable {label.value!r} not declared")
        canon = tuple(sorted(set(self.transitions), key=lambda t: (t[0], _label_key(t[1]), t[2])))
        object.__setattr__(self, "transitions", canon)
        if self.state_names is not None and len(self.state_names) != self.n_states:
            object.__setattr__(self, "state_names", None)

    # -- cached derived structure ------------------------------------------------

    @cached_property
    def _adj(self) -> list[list[tuple[Label, int]]]:
        out: list[list[tuple[Label, int]]] = [[] for _ in range(self.n_states)]
        for src, label, dst in self.transitions:
            out[src].append((label, dst))
        return out

    @cached_property
    def _eps_adj(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_states)]
        for src, label, dst in self.transitions:
            if label is None:
                out[src].append(dst)
        return out

    @cached_property
    def _by_symbol(self) -> list[dict[ExtSymbol, list[int]]]:
        out: list[dict[ExtSymbol, list[int]]] = [{} for _ in range(self.n_states)]
        for src, label, dst in self.transitions:
            if label is not None:
                out[src].setdefault(label, []).append(dst)
        return out

    @cached_property
    def _closures(self) -> list[frozenset[int]]:
        eps = self._eps_adj
        closures: list[frozenset[int]] = [frozenset()] * self.n_states
        for q in range(self.n_states):
            seen = {q}
            stack = [q]
            while stack:
                p = stack.pop()
                for nxt in eps[p]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            closures[q] = frozenset(seen)
        return closures

    def eps_closure(self, states: Iterable[int]) -> frozenset[int]:
        out: set[int] = set()
        for q in states:
            out |= self._closures[q]
        return frozenset(out)

    def moves(self, states: Iterable[int], symbol: ExtSymbol) -> frozenset[int]:
        """Closed successor set of a closed state set under one symbol."""
        by = self._by_symbol
        nxt: set[int] = set()
        for q in states:
            targets = by[q].get(symbol)
            if targets:
                nxt.update(targets)
        return self.eps_closure(nxt)

    @cached_property
    def symbols(self) -> tuple[ExtSymbol, ...]:
        """All non-silent labels occurring on transitions."""
        return tuple(sorted({t[1] for t in self.transitions if t[1] is not None}, key=_label_key))

    def state_name(self, q: int) -> str:
        if self.state_names is not None:
            return self.state_names[q]
        return str(q)

    def same_alphabet(self, other: Nfa) -> bool:
        return self.sigma == other.sigma and self.vars == other.vars

    def accepts(self, w: Sequence[ExtSymbol]) -> bool:
        current = self.eps_closure([self.initial])
        for sym in w:
            current = self.moves(current, sym)
            if not current:
                return False
        return bool(current & self.finals)


class NfaBuilder:
    """Mutable construction helper; ``build`` produces the immutable automaton."""

    def __init__(self, sigma: Iterable[str], variables: Iterable[Variable]):
        self.sigma = frozenset(sigma)
        self.vars = frozenset(check_variable_name(v) for v in variables)
        self._names: list[str] = []
        self._transitions: list[Transition] = []

    def add_state(self, name: str | None = None) -> int:
        q = len(self._names)
        self._names.append(name if name is not None else str(q))
        return q

    def add_states(self, count: int) -> list[int]:
        return [self.add_state() for _ in range(count)]

    def add_edge(self, src: int, label: Label, dst: int) -> None:
        self._transitions.append((src, label, dst))

    def build(self, initial: int, finals: Iterable[int]) -> Nfa:
        return Nfa(
            sigma=self.sigma,
            vars=self.vars,
            n_states=len(self._names),
            initial=initial,
            finals=frozenset(finals),
            transitions=tuple(self._transitions),
            state_names=tuple(self._names),
        )


def is_empty(m: Nfa) -> bool:
    """No final state reachable from the initial state."""
    if not m.finals:
        return True
    finals = m.finals
    seen = bytearray(m.n_states)
    seen[m.initial] = 1
    queue = deque([m.initial])
    adj = m._adj
    while queue:
        q = queue.popleft()
        if q in finals:
            return False
        for _, dst in adj[q]:
            if not seen[dst]:
                seen[dst] = 1
                queue.append(dst)
    return True


def reachable_states(m: Nfa) -> set[int]:
    seen = {m.initial}
    queue = deque([m.initial])
    adj = m._adj
    while queue:
        q = queue.popleft()
        for _, dst in adj[q]:
            if dst not in seen:
                seen.add(dst)
                queue.append(dst)
    return seen


def coreachable_states(m: Nfa) -> set[int]:
    back: list[list[int]] = [[] for _ in range(m.n_states)]
    for src, _, dst in m.transitions:
        back[dst].append(src)
    seen = set(m.finals)
    queue = deque(m.finals)
    while queue:
        q = queue.popleft()
        for src in back[q]:
            if src not in seen:
                seen.add(src)
                queue.append(src)
    return seen


def trim(m: Nfa) -> Nfa:
    """Drop states that are unreachable or cannot reach a final state."""
    alive = reachable_states(m) & coreachable_states(m)
    if m.initial not in alive:
        return Nfa(m.sigma, m.vars, 1, 0, frozenset(), (), (m.state_name(m.initial),))
    order = sorted(alive)
    remap = {q: i for i, q in enumerate(order)}
    transitions = tuple(
        (remap[src], label, remap[dst])
        for src, label, dst in m.transitions
        if src in alive and dst in alive
    )
    return Nfa(
        m.sigma,
        m.vars,
        len(order),
        remap[m.initial],
        frozenset(remap[q] for q in m.finals if q in alive),
        transitions,
        tuple(m.state_name(q) for q in order),
    )


def _bisim_quotient(m: Nfa, backward: bool) -> Nfa | None:
    """Quotient by the coarsest (backward or forward) bisimulation; None if trivial.

    Backward bisimilar states have the same residual languages; forward
    bisimilar states are reached under the same inputs.  Quotienting by either
    preserves the accepted language, silent transitions treated as a label.
    """
    edges: list[list[tuple[Label, int]]] = [[] for _ in range(m.n_states)]
    for src, label, dst in m.transitions:
        if backward:
            edges[src].append((label, dst))
        else:
            edges[dst].append((label, src))
    if backward:
        cls = [1 if q in m.finals else 0 for q in range(m.n_states)]
    else:
        cls = [1 if q == m.initial else 0 for q in range(m.n_states)]
    n_classes = 2
    while True:
        sig: dict[tuple, int] = {}
        new_cls = [0] * m.n_states
        for q in range(m.n_states):
            key = (cls[q], frozenset((label, cls[other]) for label, other in edges[q]))
            code = sig.setdefault(key, len(sig))
            new_cls[q] = code
        if len(sig) == n_classes:
            break
        cls, n_classes = new_cls, len(sig)
    if n_classes == m.n_states:
        return None
    names: list[str] = [""] * n_classes
    for q in range(m.n_states):
        if not names[cls[q]]:
            names[cls[q]] = m.state_name(q)
    transitions = tuple((cls[src], label, cls[dst]) for src, label, dst in m.transitions)
    return Nfa(
        m.sigma,
        m.vars,
        n_classes,
        cls[m.initial],
        frozenset(cls[q] for q in m.finals),
        transitions,
        tuple(names),
    )


def reduce_nfa(m: Nfa) -> Nfa:
    """Trim plus alternating bisimulation quotients (language-preserving)."""
    current = trim(m)
    while True:
        merged = _bisim_quotient(current, backward=True)
        if merged is not None:
            current = trim(merged)
            continue
        merged = _bisim_quotient(current, backward=False)
        if merged is None:
            return current
        current = trim(merged)


def product(m1: Nfa, m2: Nfa) -> Nfa:
    """Intersection automaton over pairs of states, built lazily."""
    if not m1.same_alphabet(m2):
        raise AlphabetMismatchError("product requires identical alphabet declarations")
    builder = NfaBuilder(m1.sigma, m1.vars)
    index: dict[tuple[int, int], int] = {}

    def state(pair: tuple[int, int]) -> int:
        q = index.get(pair)
        if q is None:
            q = builder.add_state(f"{m1.state_name(pair[0])}|{m2.state_name(pair[1])}")
            index[pair] = q
        return q

    start = (m1.initial, m2.initial)
    state(start)
    queue = deque([start])
    seen = {start}
    while queue:
        q1, q2 = queue.popleft()
        src = state((q1, q2))
        for label, p1 in m1._adj[q1]:
            if label is None:
                pair = (p1, q2)
                builder.add_edge(src, None, state(pair))
                if pair not in seen:
                    seen.add(pair)
                    queue.append(pair)
            else:
                for p2 in m2._by_symbol[q2].get(label, ()):
                    pair = (p1, p2)
                    builder.add_edge(src, label, state(pair))
                    if pair not in seen:
                        seen.add(pair)
                        queue.append(pair)
        for p2 in m2._eps_adj[q2]:
            pair = (q1, p2)
            builder.add_edge(src, None, state(pair))
            if pair not in seen:
                seen.add(pair)
                queue.append(pair)
    finals = [q for pair, q in index.items() if pair[0] in m1.finals and pair[1] in m2.finals]
    return builder.build(index[start], finals)


def inclusion(m1: Nfa, m2: Nfa, max_configs: int = DEFAULT_SUBSET_CAP) -> bool:
    """Language inclusion by on-the-fly subset construction with antichain pruning.

    Explores pairs (state of m1, subset-state of m2); a pair with a smaller
    subset subsumes any pair with a superset, so only minimal subsets are kept.
    """
    if not m1.same_alphabet(m2):
        raise AlphabetMismatchError("inclusion requires identical alphabet declarations")

    frontier: deque[tuple[int, frozenset[int]]] = deque()
    antichain: dict[int, list[frozenset[int]]] = {}

    def dominated(q: int, subset: frozenset[int]) -> bool:
        return any(prev <= subset for prev in antichain.get(q, ()))

    def push(q: int, subset: frozenset[int]) -> None:
        if dominated(q, subset):
            return
        chain = antichain.setdefault(q, [])
        chain[:] = [prev for prev in chain if not (subset <= prev)]
        chain.append(subset)
        frontier.append((q, subset))

    visited = 0
    start2 = m2.eps_closure([m2.initial])
    for q in m1.eps_closure([m1.initial]):
        push(q, start2)
    while frontier:
        q1, subset = frontier.popleft()
        if dominated(q1, subset) and subset not in antichain.get(q1, ()):
            continue
        visited += 1
        if visited > max_configs:
            raise ResourceLimitError(f"inclusion exceeded {max_configs} subset configurations")
        if q1 in m1.finals and not (subset & m2.finals):
            return False
        for label, dsts in m1._by_symbol[q1].items():
            subset2 = m2.moves(subset, label)
            for p1raw in dsts:
                for p1 in m1.eps_closure([p1raw]):
                    push(p1, subset2)
    return True


def enumerate_words(m: Nfa, max_len: int) -> set[tuple[ExtSymbol, ...]]:
    """Exactly the accepted words of length at most ``max_len``, duplicate-free."""
    if max_len < 0:
        raise ValueError("max_len must be non-negative")
    accepted: set[tuple[ExtSymbol, ...]] = set()
    start = m.eps_closure([m.initial])
    level: dict[tuple[ExtSymbol, ...], frozenset[int]] = {(): start}
    finals = m.finals
    for _ in range(max_len + 1):
        nxt: dict[tuple[ExtSymbol, ...], set[int]] = {}
        for w, states in level.items():
            if states & finals:
                accepted.add(w)
            for q in states:
                for label, dsts in m._by_symbol[q].items():
                    key = w + (label,)
                    nxt.setdefault(key, set()).update(dsts)
        level = {w: m.eps_closure(states) for w, states in nxt.items()}
        if not level:
            break
    return accepted


def shortest_word(m: Nfa) -> tuple[ExtSymbol, ...] | None:
    """A length-minimal accepted word, or None for the empty language."""
    start = m.eps_closure([m.initial])
    if start & m.finals:
        return ()
    seen = set(start)
    queue: deque[tuple[int, tuple[ExtSymbol, ...]]] = deque((q, ()) for q in start)
    while queue:
        q, w = queue.popleft()
        for label, dsts in m._by_symbol[q].items():
            for dst in m.eps_closure(dsts):
                if dst in seen:
                    continue
                seen.add(dst)
                w2 = w + (label,)
                if dst in m.finals:
                    return w2
                queue.append((dst, w2))
    return None


# -- textual serialization ------------------------------------------------------


def nfa_to_dict(m: Nfa) -> dict:
    return {
        "sigma": "".join(sorted(m.sigma)),
        "vars": sorted(m.vars),
        "states": m.n_states,
        "initial": m.initial,
        "finals": sorted(m.finals),
        "transitions": [
            [src, (label.kind.value if label is not None else "eps"), (label.value if label is not None else ""), dst]
            for src, label, dst in m.transitions
        ],
    }


def nfa_from_dict(data: dict) -> Nfa:
    try:
        sigma = frozenset(data["sigma"])
        variables = frozenset(data["vars"])
        transitions: list[Transition] = []
        for src, kind, value, dst in data["transitions"]:
            if kind == "eps":
                label: Label = None
            elif kind == "term":
                label = term(value)
            elif kind == "open":
                label = open_marker(value)
            elif kind == "close":
                label = close_marker(value)
            elif kind == "ref":
                label = ref(value)
            else:
                raise ParseError(f"unknown label kind {kind!r}")
            transitions.append((int(src), label, int(dst)))
        return Nfa(
            sigma=sigma,
            vars=variables,
            n_states=int(data["states"]),
            initial=int(data["initial"]),
            finals=frozenset(int(q) for q in data["finals"]),
            transitions=tuple(transitions),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed automaton file: {exc}") from exc


def nfa_to_text(m: Nfa) -> str:
    return json.dumps(nfa_to_dict(m), indent=1, sort_keys=True) + "\n"


def nfa_from_text(text: str) -> Nfa:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed automaton file: {exc}") from exc
    return nfa_from_dict(data)
