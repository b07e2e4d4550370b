"""Word-level semantics of marked words and reference expansion.

A marked word is a flat sequence of extended-alphabet symbols.  Spans reported
by :func:`spt` are positions of the *projected* word (markers erased), while
error messages use 1-based symbol indices of the marked word itself.

Textual syntax (whitespace-insensitive): terminals stand for themselves,
``<x`` opens variable ``x``, ``x>`` closes it, ``&x`` is a reference.
"""

from __future__ import annotations

from itertools import permutations
from typing import Iterable, Iterator, Sequence, TypeAlias

from .errors import ParseError, PreconditionError
from .spans import (
    ExtSymbol,
    Span,
    SpanTuple,
    SymbolKind,
    ValidOrder,
    Variable,
    close_marker,
    open_marker,
    ref,
    term,
)

MarkedWord: TypeAlias = tuple[ExtSymbol, ...]


def word(symbols: Iterable[ExtSymbol]) -> MarkedWord:
    return tuple(symbols)


def format_word(w: Sequence[ExtSymbol]) -> str:
    return " ".join(str(s) for s in w) if w else "eps"


_IDENT_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")


def parse_word(text: str, sigma: Iterable[str], variables: Iterable[Variable]) -> MarkedWord:
    """Parse the textual marked-word syntax against declared alphabets.

    A maximal identifier immediately followed by ``>`` is split so that its
    longest suffix naming a declared variable forms the close marker; write
    spaces to disambiguate by hand.
    """
    sigma_set = set(sigma)
    var_set = set(variables)
    out: list[ExtSymbol] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "<&":
            j = i + 1
            while j < n and text[j] in _IDENT_CHARS:
                j += 1
            name = text[i + 1 : j]
            if name not in var_set:
                raise ParseError(f"unknown variable {name!r}", i)
            out.append(open_marker(name) if ch == "<" else ref(name))
            i = j
            continue
        if ch in _IDENT_CHARS:
            j = i
            while j < n and text[j] in _IDENT_CHARS:
                j += 1
            ident = text[i:j]
            if j < n and text[j] == ">":
                suffix = None
                for k in range(len(ident)):
                    if ident[k:] in var_set:
                        suffix = ident[k:]
                        break
                if suffix is None:
                    raise ParseError(f"no declared variable closes {ident!r}", i)
                for c in ident[: len(ident) - len(suffix)]:
                    if c not in sigma_set:
                        raise ParseError(f"terminal {c!r} not in alphabet", i)
                    out.append(term(c))
                out.append(close_marker(suffix))
                i = j + 1
                continue
            for c in ident:
                if c not in sigma_set:
                    raise ParseError(f"terminal {c!r} not in alphabet", i)
                out.append(term(c))
            i = j
            continue
        if ch in sigma_set:
            out.append(term(ch))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    return tuple(out)


def wrd(v: Sequence[ExtSymbol]) -> MarkedWord:
    """Erase all markers; terminals and references survive in order."""
    return tuple(s for s in v if not s.is_marker)


def text_of(v: Sequence[ExtSymbol]) -> str:
    """Terminal string of a fully expanded word (must contain no references)."""
    chars = []
    for s in v:
        if s.kind is SymbolKind.REF:
            raise PreconditionError("word still contains references")
        if s.kind is SymbolKind.TERM:
            chars.append(s.value)
    return "".join(chars)


def is_subword_marked_word(v: Sequence[ExtSymbol]) -> bool:
    """Per variable, the marker projection must be empty or one open-close pair."""
    seen_open: set[Variable] = set()
    seen_close: set[Variable] = set()
    for s in v:
        if s.kind is SymbolKind.OPEN:
            if s.value in seen_open:
                return False
            seen_open.add(s.value)
        elif s.kind is SymbolKind.CLOSE:
            if s.value in seen_close or s.value not in seen_open:
                return False
            seen_close.add(s.value)
    return seen_open == seen_close


def is_ref_word(v: Sequence[ExtSymbol]) -> bool:
    """Subword-marked, and every reference occurs after its variable closed."""
    if not is_subword_marked_word(v):
        return False
    closed: set[Variable] = set()
    for s in v:
        if s.kind is SymbolKind.CLOSE:
            closed.add(s.value)
        elif s.kind is SymbolKind.REF and s.value not in closed:
            return False
    return True


def spt(v: Sequence[ExtSymbol]) -> SpanTuple:
    """Span-tuple encoded by a subword-marked word (positions of the projected word)."""
    if not is_subword_marked_word(v):
        raise PreconditionError("not a subword-marked word", format_word(v))
    pos = 0
    lo: dict[Variable, int] = {}
    bindings: dict[Variable, Span] = {}
    for s in v:
        if s.kind is SymbolKind.OPEN:
            lo[s.value] = pos + 1
        elif s.kind is SymbolKind.CLOSE:
            bindings[s.value] = Span(lo[s.value], pos + 1)
        else:
            pos += 1
    return SpanTuple.of(bindings)


def definition_of(v: Sequence[ExtSymbol], x: Variable) -> MarkedWord | None:
    """Content between <x and x>, or None when x is undefined."""
    start = end = None
    for i, s in enumerate(v):
        if s.kind is SymbolKind.OPEN and s.value == x:
            start = i
        elif s.kind is SymbolKind.CLOSE and s.value == x:
            end = i
    if start is None or end is None:
        return None
    return tuple(v[start + 1 : end])


def deref(v: Sequence[ExtSymbol]) -> MarkedWord:
    """Expand references bottom-up until only terminals and markers remain.

    Each round substitutes, for some variable whose definition content is
    already reference-free, the terminal word of that content for every
    reference of the variable.  Reference-before-definition cannot occur in a
    ref-word, so the rounds terminate.
    """
    if not is_ref_word(v):
        raise PreconditionError("not a ref-word", format_word(v))
    current = tuple(v)
    for _ in range(len(current) + 1):
        referenced = {s.value for s in current if s.kind is SymbolKind.REF}
        if not referenced:
            return current
        substituted = False
        for x in sorted(referenced):
            content = definition_of(current, x)
            assert content is not None, "reference without definition in a ref-word"
            body = wrd(content)
            if any(s.kind is SymbolKind.REF for s in body):
                continue
            expansion = tuple(s for s in body)
            out: list[ExtSymbol] = []
            for s in current:
                if s.kind is SymbolKind.REF and s.value == x:
                    out.extend(expansion)
                else:
                    out.append(s)
            current = tuple(out)
            substituted = True
            break
        assert substituted, "cyclic definitions cannot occur in a ref-word"
    raise AssertionError("reference expansion failed to terminate")


def is_eps_referencing(v: Sequence[ExtSymbol]) -> bool:
    """Some referenced variable expands to the empty span."""
    if not is_ref_word(v):
        raise PreconditionError("not a ref-word", format_word(v))
    expanded = deref(v)
    t = spt(expanded)
    for x in {s.value for s in v if s.kind is SymbolKind.REF}:
        s = t.get(x)
        if s is not None and s.is_empty:
            return True
    return False


def is_normalized_word(v: Sequence[ExtSymbol], ord: ValidOrder) -> bool:
    """Adjacent markers must be non-decreasing in the given order."""
    prev: ExtSymbol | None = None
    for s in v:
        if s.is_marker:
            if prev is not None and ord.rank(prev) > ord.rank(s):
                return False
            prev = s
        else:
            prev = None
    return True


def marked_with(text: str, t: SpanTuple, ord: ValidOrder) -> MarkedWord:
    """The normalized marked word encoding document ``text`` with tuple ``t``."""
    n = len(text)
    at: dict[int, list[ExtSymbol]] = {}
    for x, s in t:
        if s.hi > n + 1:
            raise PreconditionError(f"span {s} exceeds document length {n}")
        at.setdefault(s.lo, []).append(open_marker(x))
        at.setdefault(s.hi, []).append(close_marker(x))
    out: list[ExtSymbol] = []
    for i in range(1, n + 2):
        out.extend(ord.sort_markers(at.get(i, [])))
        if i <= n:
            out.append(term(text[i - 1]))
    return tuple(out)


def gamma_factors(v: Sequence[ExtSymbol]) -> list[tuple[int, int]]:
    """Index ranges of the maximal marker runs of a word."""
    runs: list[tuple[int, int]] = []
    i = 0
    while i < len(v):
        if v[i].is_marker:
            j = i
            while j < len(v) and v[j].is_marker:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def gamma_permutations(v: Sequence[ExtSymbol]) -> Iterator[MarkedWord]:
    """All reorderings of every maximal marker run (brute-force closure)."""
    runs = gamma_factors(v)

    def rec(idx: int, acc: tuple[ExtSymbol, ...], pos: int) -> Iterator[MarkedWord]:
        if idx == len(runs):
            yield acc + tuple(v[pos:])
            return
        start, end = runs[idx]
        head = acc + tuple(v[pos:start])
        for perm in set(permutations(v[start:end])):
            yield from rec(idx + 1, head + perm, end)

    return rec(0, (), 0)


def is_strongly_ref_extracting_word(
    v: Sequence[ExtSymbol],
    refs: Iterable[Variable],
    extractors: dict[Variable, set[Variable]],
) -> bool:
    """Word-level check of the extraction discipline for references.

    ``refs`` lists the content variables; ``extractors[x]`` the dedicated
    extraction variables of ``x``.  Every reference of a content variable must
    sit alone (up to markers) inside one of its extractors, extractors are
    never referenced and hold nothing else, and every referenced content
    variable must expand to at least two letters.
    """
    if not is_ref_word(v):
        return False
    ref_set = set(refs)
    owner: dict[Variable, Variable] = {}
    for x, ys in extractors.items():
        for y in ys:
            owner[y] = x

    for i, s in enumerate(v):
        if s.kind is not SymbolKind.REF:
            continue
        x = s.value
        if x not in ref_set:
            return False  # references of extraction variables are forbidden
        wrapped = False
        for y in extractors.get(x, ()):  # open to the left across markers only
            k = i - 1
            seen_open = False
            while k >= 0 and v[k].is_marker:
                if v[k] == open_marker(y):
                    seen_open = True
                    break
                k -= 1
            if not seen_open:
                continue
            k = i + 1
            while k < len(v) and v[k].is_marker:
                if v[k] == close_marker(y):
                    wrapped = True
                    break
                k += 1
            if wrapped:
                break
        if not wrapped:
            return False

    for y, x in owner.items():
        content = definition_of(v, y)
        if content is None:
            continue
        body = wrd(content)
        if len(body) != 1 or body[0] != ref(x):
            return False
        if any(s == ref(y) for s in v):
            return False

    expanded = deref(v)
    t = spt(expanded)
    for x in ref_set:
        if any(s == ref(x) for s in v):
            span = t.get(x)
            if span is None or len(span) < 2:
                return False
    return True
