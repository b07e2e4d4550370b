"""Ref-regex front end: parsing, printing, and compilation to an NFA.

Grammar (whitespace-insensitive): alternation ``|`` binds loosest, then
juxtaposition for concatenation, then the postfix operators ``* + ?``.
``x{ R }`` brackets the body of capture variable ``x``, ``&x`` references it,
``eps`` is the empty word and ``empty`` the empty language.  Terminals are
single characters of the declared alphabet; a bare identifier is read as a run
of terminal characters unless it is followed by ``{`` (capture) or spells one
of the two keywords.  Metacharacters and whitespace cannot be terminals.

``?`` is parsed as sugar for ``(R|eps)`` and has no node of its own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .automaton import Nfa, NfaBuilder
from .errors import ParseError
from .spans import Variable, check_variable_name, close_marker, open_marker, ref, term

_META = set("|()*+?{}&")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
_IDENT_CHARS = _IDENT_START | set("0123456789_")


class RefRegexAst:
    """Base class of expression nodes."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Empty(RefRegexAst):
    pass


@dataclass(frozen=True, slots=True)
class Epsilon(RefRegexAst):
    pass


@dataclass(frozen=True, slots=True)
class Term(RefRegexAst):
    ch: str


@dataclass(frozen=True, slots=True)
class Concat(RefRegexAst):
    parts: tuple[RefRegexAst, ...]


@dataclass(frozen=True, slots=True)
class Alt(RefRegexAst):
    parts: tuple[RefRegexAst, ...]


@dataclass(frozen=True, slots=True)
class Star(RefRegexAst):
    inner: RefRegexAst


@dataclass(frozen=True, slots=True)
class Plus(RefRegexAst):
    inner: RefRegexAst


@dataclass(frozen=True, slots=True)
class Capture(RefRegexAst):
    var: Variable
    inner: RefRegexAst


@dataclass(frozen=True, slots=True)
class Ref(RefRegexAst):
    var: Variable


def concat(parts: list[RefRegexAst]) -> RefRegexAst:
    if not parts:
        return Epsilon()
    if len(parts) == 1:
        return parts[0]
    return Concat(tuple(parts))


def alt(parts: list[RefRegexAst]) -> RefRegexAst:
    if len(parts) == 1:
        return parts[0]
    return Alt(tuple(parts))


class _Parser:
    def __init__(self, text: str, sigma: frozenset[str]):
        self.text = text
        self.sigma = sigma
        self.pos = 0

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.pos)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str | None:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else None

    def parse(self) -> RefRegexAst:
        node = self.parse_alt()
        if self.peek() is not None:
            raise self.error(f"unexpected {self.text[self.pos]!r}")
        return node

    def parse_alt(self) -> RefRegexAst:
        parts = [self.parse_concat()]
        while self.peek() == "|":
            self.pos += 1
            parts.append(self.parse_concat())
        return alt(parts)

    def parse_concat(self) -> RefRegexAst:
        parts: list[RefRegexAst] = []
        while True:
            ch = self.peek()
            if ch is None or ch in "|)}":
                break
            parts.append(self.parse_postfix())
        if not parts:
            raise self.error("expected expression")
        return concat(parts)

    def parse_postfix(self) -> RefRegexAst:
        node = self.parse_atom()
        while True:
            ch = self.peek()
            if ch == "*":
                node = Star(node)
            elif ch == "+":
                node = Plus(node)
            elif ch == "?":
                node = Alt((node, Epsilon()))
            else:
                return node
            self.pos += 1

    def read_ident(self) -> Variable:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in _IDENT_CHARS:
            self.pos += 1
        if self.pos == start:
            raise self.error("expected variable name")
        return self.text[start : self.pos]

    def terminal(self, ch: str) -> RefRegexAst:
        if ch not in self.sigma:
            raise self.error(f"unknown terminal {ch!r}")
        return Term(ch)

    def parse_atom(self) -> RefRegexAst:
        ch = self.peek()
        if ch is None:
            raise self.error("expected expression")
        if ch == "(":
            self.pos += 1
            node = self.parse_alt()
            if self.peek() != ")":
                raise self.error("expected ')'")
            self.pos += 1
            return node
        if ch == "&":
            self.pos += 1
            return Ref(check_variable_name(self.read_ident()))
        if ch in _IDENT_START:
            start = self.pos
            ident = self.read_ident()
            if self.pos < len(self.text) and self.text[self.pos] == "{":
                self.pos += 1
                inner = self.parse_alt()
                if self.peek() != "}":
                    raise self.error("expected '}'")
                self.pos += 1
                return Capture(check_variable_name(ident), inner)
            if ident == "eps":
                return Epsilon()
            if ident == "empty":
                return Empty()
            # a bare identifier is a run of terminals; consume one character,
            # the concatenation loop picks up the rest
            self.pos = start + 1
            return self.terminal(ch)
        self.pos += 1
        return self.terminal(ch)


def parse_refregex(text: str, sigma: Iterable[str]) -> RefRegexAst:
    """Parse an expression against the declared terminal alphabet."""
    return _Parser(text, frozenset(sigma)).parse()


def ast_variables(node: RefRegexAst) -> set[Variable]:
    if isinstance(node, Capture):
        return {node.var} | ast_variables(node.inner)
    if isinstance(node, Ref):
        return {node.var}
    if isinstance(node, (Concat, Alt)):
        out: set[Variable] = set()
        for p in node.parts:
            out |= ast_variables(p)
        return out
    if isinstance(node, (Star, Plus)):
        return ast_variables(node.inner)
    return set()


def print_ast(node: RefRegexAst, _prec: int = 0) -> str:
    """Render an AST back to the concrete syntax (reparses to an equal AST)."""

    def wrap(text: str, level: int) -> str:
        return f"({text})" if level < _prec else text

    if isinstance(node, Empty):
        return "empty"
    if isinstance(node, Epsilon):
        return "eps"
    if isinstance(node, Term):
        return node.ch
    if isinstance(node, Ref):
        return f"&{node.var}"
    if isinstance(node, Capture):
        return f"{node.var}{{{print_ast(node.inner, 0)}}}"
    if isinstance(node, Star):
        return print_ast(node.inner, 3) + "*"
    if isinstance(node, Plus):
        return print_ast(node.inner, 3) + "+"
    if isinstance(node, Concat):
        return wrap(" ".join(print_ast(p, 2) for p in node.parts), 1)
    if isinstance(node, Alt):
        return wrap("|".join(print_ast(p, 1) for p in node.parts), 0)
    raise TypeError(f"unknown node {node!r}")


def compile(ast: RefRegexAst, sigma: Iterable[str], extra_vars: Iterable[Variable] = ()) -> Nfa:
    """Thompson-style construction; each operator contributes O(1) states."""
    variables = ast_variables(ast) | set(extra_vars)
    builder = NfaBuilder(sigma, variables)

    def rec(node: RefRegexAst) -> tuple[int, int]:
        start, end = builder.add_state(), builder.add_state()
        if isinstance(node, Empty):
            pass
        elif isinstance(node, Epsilon):
            builder.add_edge(start, None, end)
        elif isinstance(node, Term):
            builder.add_edge(start, term(node.ch), end)
        elif isinstance(node, Ref):
            builder.add_edge(start, ref(node.var), end)
        elif isinstance(node, Capture):
            s, e = rec(node.inner)
            builder.add_edge(start, open_marker(node.var), s)
            builder.add_edge(e, close_marker(node.var), end)
        elif isinstance(node, Concat):
            prev = start
            for part in node.parts:
                s, e = rec(part)
                builder.add_edge(prev, None, s)
                prev = e
            builder.add_edge(prev, None, end)
        elif isinstance(node, Alt):
            for part in node.parts:
                s, e = rec(part)
                builder.add_edge(start, None, s)
                builder.add_edge(e, None, end)
        elif isinstance(node, Star):
            s, e = rec(node.inner)
            builder.add_edge(start, None, end)
            builder.add_edge(start, None, s)
            builder.add_edge(e, None, s)
            builder.add_edge(e, None, end)
        elif isinstance(node, Plus):
            s, e = rec(node.inner)
            builder.add_edge(start, None, s)
            builder.add_edge(e, None, s)
            builder.add_edge(e, None, end)
        else:
            raise TypeError(f"unknown node {node!r}")
        return start, end

    start, end = rec(ast)
    return builder.build(start, {end})


def compile_refregex(text: str, sigma: Iterable[str], extra_vars: Iterable[Variable] = ()) -> Nfa:
    return compile(parse_refregex(text, sigma), sigma, extra_vars)


# -- .refx files -----------------------------------------------------------------


def read_refx(text: str) -> tuple[frozenset[str], tuple[Variable, ...], RefRegexAst]:
    """Parse a .refx document: ``sigma:`` line, optional ``vars:`` line, expression."""
    lines = text.splitlines()
    idx = 0
    sigma: frozenset[str] | None = None
    declared: tuple[Variable, ...] = ()
    while idx < len(lines):
        line = lines[idx].strip()
        if line.startswith("sigma:"):
            sigma = frozenset(line[len("sigma:") :].strip())
            idx += 1
        elif line.startswith("vars:"):
            declared = tuple(
                check_variable_name(v.strip()) for v in line[len("vars:") :].split(",") if v.strip()
            )
            idx += 1
        elif not line:
            idx += 1
        else:
            break
    if sigma is None:
        raise ParseError("missing 'sigma:' header line")
    body = "\n".join(lines[idx:])
    if not body.strip():
        raise ParseError("missing expression")
    return sigma, declared, parse_refregex(body, sigma)


def refx_to_nfa(text: str) -> Nfa:
    sigma, declared, ast = read_refx(text)
    return compile(ast, sigma, declared)
