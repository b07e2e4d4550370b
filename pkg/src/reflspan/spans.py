"""Core value types: variables, extended-alphabet symbols, spans, span-tuples.

Positions are 1-based with an exclusive upper bound: the span ``[i, j)`` of a
document covers characters ``i .. j-1`` and is empty iff ``i == j``.  An
undefined variable is represented by *absence* from the tuple's partial map,
never by a sentinel span.  All values here are immutable and hashable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping

from .errors import ParseError

# A variable is a plain identifier string; validity is checked at the
# boundaries where variable sets are declared (automata, parsers, orders).
Variable = str

_VARIABLE_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")


def is_valid_variable_name(name: str) -> bool:
    return bool(_VARIABLE_RE.match(name))


def check_variable_name(name: str) -> str:
    if not is_valid_variable_name(name):
        raise ParseError(f"invalid variable name {name!r}")
    return name


class SymbolKind(str, Enum):
    TERM = "term"
    OPEN = "open"
    CLOSE = "close"
    REF = "ref"

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return self.value


@dataclass(frozen=True, slots=True)
class ExtSymbol:
    """One letter of the extended alphabet.

    ``value`` is a terminal character for TERM, otherwise a variable name.
    """

    kind: SymbolKind
    value: str

    def __str__(self) -> str:
        if self.kind is SymbolKind.TERM:
            return self.value
        if self.kind is SymbolKind.OPEN:
            return f"<{self.value}"
        if self.kind is SymbolKind.CLOSE:
            return f"{self.value}>"
        return f"&{self.value}"

    @property
    def is_marker(self) -> bool:
        return self.kind is SymbolKind.OPEN or self.kind is SymbolKind.CLOSE

    def sort_key(self) -> tuple[str, str]:
        return (self.value, self.kind.value)


_interned: dict[tuple[SymbolKind, str], ExtSymbol] = {}


def _sym(kind: SymbolKind, value: str) -> ExtSymbol:
    key = (kind, value)
    sym = _interned.get(key)
    if sym is None:
        sym = ExtSymbol(kind, value)
        _interned[key] = sym
    return sym


def term(ch: str) -> ExtSymbol:
    return _sym(SymbolKind.TERM, ch)


def open_marker(var: Variable) -> ExtSymbol:
    return _sym(SymbolKind.OPEN, var)


def close_marker(var: Variable) -> ExtSymbol:
    return _sym(SymbolKind.CLOSE, var)


def ref(var: Variable) -> ExtSymbol:
    return _sym(SymbolKind.REF, var)


@dataclass(frozen=True, slots=True, order=True)
class Span:
    """Half-open interval ``[lo, hi)`` of 1-based document positions."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not (1 <= self.lo <= self.hi):
            raise ValueError(f"invalid span [{self.lo},{self.hi})")

    def __str__(self) -> str:
        return f"[{self.lo},{self.hi})"

    @property
    def is_empty(self) -> bool:
        return self.lo == self.hi

    def __len__(self) -> int:
        return self.hi - self.lo

    def positions(self) -> range:
        """The span read as a set of positions."""
        return range(self.lo, self.hi)

    def value_of(self, text: str) -> str:
        """Substring of ``text`` covered by this span."""
        return text[self.lo - 1 : self.hi - 1]


def span_fuse(a: Span | None, b: Span | None) -> Span | None:
    """Smallest span covering both arguments; absent operands are neutral."""
    if a is None:
        return b
    if b is None:
        return a
    return Span(min(a.lo, b.lo), max(a.hi, b.hi))


def fuse_all(spans: Iterable[Span | None]) -> Span | None:
    out: Span | None = None
    for s in spans:
        out = span_fuse(out, s)
    return out


def spans_relation(a: Span, b: Span) -> str:
    """Classify a span pair: ``equal``, ``disjoint``, ``nested`` or ``overlapping``.

    Disjointness is the interval condition (hi <= lo' or hi' <= lo); nesting is
    set containment, so an empty span strictly inside another is nested, not
    disjoint.
    """
    if a == b:
        return "equal"
    if a.hi <= b.lo or b.hi <= a.lo:
        return "disjoint"
    a_pos, b_pos = set(a.positions()), set(b.positions())
    if a_pos <= b_pos or b_pos <= a_pos:
        return "nested"
    return "overlapping"


def spans_quasi_disjoint(a: Span, b: Span) -> bool:
    return a == b or a.hi <= b.lo or b.hi <= a.lo


def spans_hierarchical(a: Span, b: Span) -> bool:
    a_pos, b_pos = set(a.positions()), set(b.positions())
    return a_pos <= b_pos or b_pos <= a_pos or not (a_pos & b_pos)


@dataclass(frozen=True, slots=True)
class SpanTuple:
    """Partial map from variables to spans, stored canonically sorted."""

    bindings: tuple[tuple[Variable, Span], ...]

    @staticmethod
    def of(mapping: Mapping[Variable, Span | None] | Iterable[tuple[Variable, Span | None]] = ()) -> SpanTuple:
        items = mapping.items() if isinstance(mapping, Mapping) else mapping
        return SpanTuple(tuple(sorted((v, s) for v, s in items if s is not None)))

    def get(self, var: Variable) -> Span | None:
        for v, s in self.bindings:
            if v == var:
                return s
        return None

    @property
    def domain(self) -> frozenset[Variable]:
        return frozenset(v for v, _ in self.bindings)

    def as_dict(self) -> dict[Variable, Span]:
        return dict(self.bindings)

    def __iter__(self) -> Iterator[tuple[Variable, Span]]:
        return iter(self.bindings)

    def __str__(self) -> str:
        inner = ", ".join(f"{v}={s}" for v, s in self.bindings)
        return "{" + inner + "}"

    def restrict(self, keep: Iterable[Variable]) -> SpanTuple:
        keep_set = set(keep)
        return SpanTuple(tuple((v, s) for v, s in self.bindings if v in keep_set))

    def to_json(self, variables: Iterable[Variable]) -> dict[str, list[int] | None]:
        """Flat object mapping each variable to ``[lo, hi]`` or ``null``."""
        out: dict[str, list[int] | None] = {}
        for v in sorted(variables):
            s = self.get(v)
            out[v] = None if s is None else [s.lo, s.hi]
        return out

    @staticmethod
    def from_json(obj: Mapping[str, object]) -> SpanTuple:
        items: list[tuple[Variable, Span]] = []
        for v, raw in obj.items():
            if raw is None:
                continue
            if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
                raise ParseError(f"span for {v!r} must be [lo, hi] or null")
            lo, hi = raw
            items.append((check_variable_name(v), Span(int(lo), int(hi))))
        return SpanTuple.of(items)


def tuple_properties(t: SpanTuple, variables: Iterable[Variable]) -> dict[str, bool]:
    """Functionality (w.r.t. the declared variables), hierarchicality, quasi-disjointness."""
    spans = [s for _, s in t.bindings]
    hierarchical = True
    quasi_disjoint = True
    for i in range(len(spans)):
        for j in range(i + 1, len(spans)):
            if not spans_hierarchical(spans[i], spans[j]):
                hierarchical = False
            if not spans_quasi_disjoint(spans[i], spans[j]):
                quasi_disjoint = False
    return {
        "functional": t.domain == frozenset(variables),
        "hierarchical": hierarchical,
        "quasi_disjoint": quasi_disjoint,
    }


@dataclass(frozen=True, slots=True)
class SpanRelation:
    """Finite set of span-tuples over a fixed variable set and document length."""

    tuples: frozenset[SpanTuple]
    variables: frozenset[Variable]
    doc_len: int

    def __post_init__(self) -> None:
        for t in self.tuples:
            for v, s in t:
                if v not in self.variables:
                    raise ValueError(f"tuple binds undeclared variable {v!r}")
                if s.hi > self.doc_len + 1:
                    raise ValueError(f"span {s} exceeds document length {self.doc_len}")

    @staticmethod
    def of(tuples: Iterable[SpanTuple], variables: Iterable[Variable], doc_len: int) -> SpanRelation:
        return SpanRelation(frozenset(tuples), frozenset(variables), doc_len)

    def __iter__(self) -> Iterator[SpanTuple]:
        return iter(self.tuples)

    def __len__(self) -> int:
        return len(self.tuples)

    def sorted_tuples(self) -> list[SpanTuple]:
        return sorted(self.tuples, key=lambda t: t.bindings)

    def to_json(self) -> list[dict[str, list[int] | None]]:
        return [t.to_json(self.variables) for t in self.sorted_tuples()]


@dataclass(frozen=True)
class ValidOrder:
    """Total order on the markers of a variable set; every open precedes its close."""

    sequence: tuple[ExtSymbol, ...]
    _rank: dict[ExtSymbol, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        opens = {s.value for s in self.sequence if s.kind is SymbolKind.OPEN}
        closes = {s.value for s in self.sequence if s.kind is SymbolKind.CLOSE}
        if opens != closes or len(self.sequence) != 2 * len(opens):
            raise ValueError("order must list every open and close marker exactly once")
        rank = {s: i for i, s in enumerate(self.sequence)}
        for v in opens:
            if rank[open_marker(v)] > rank[close_marker(v)]:
                raise ValueError(f"open marker of {v!r} must precede its close marker")
        object.__setattr__(self, "_rank", rank)

    @staticmethod
    def from_vars(variables: Iterable[Variable]) -> ValidOrder:
        """Derive <x, x>, <y, y>, ... from a variable list."""
        seq: list[ExtSymbol] = []
        for v in variables:
            seq.append(open_marker(check_variable_name(v)))
            seq.append(close_marker(v))
        return ValidOrder(tuple(seq))

    @staticmethod
    def default_for(variables: Iterable[Variable]) -> ValidOrder:
        return ValidOrder.from_vars(sorted(set(variables)))

    @property
    def variables(self) -> frozenset[Variable]:
        return frozenset(s.value for s in self.sequence)

    def rank(self, marker: ExtSymbol) -> int:
        return self._rank[marker]

    def sort_markers(self, markers: Iterable[ExtSymbol]) -> list[ExtSymbol]:
        return sorted(markers, key=self._rank.__getitem__)

    def __str__(self) -> str:
        return ",".join(str(s) for s in self.sequence)
