"""Exception hierarchy shared across the library.

Exit-code mapping for the CLI lives in :mod:`reflspan.cli`; library code only
raises these types.
"""

from __future__ import annotations


class ReflspanError(Exception):
    """Base class for all library errors."""


class ParseError(ReflspanError):
    """Syntax error in an expression, marked word, or config file."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)


class AlphabetMismatchError(ReflspanError):
    """Two automata with different terminal/variable declarations were combined."""


class PreconditionError(ReflspanError):
    """An operation was called on input violating its documented contract.

    ``witness`` optionally carries a counterexample (e.g. an accepted word
    that breaks a required language property).
    """

    def __init__(self, message: str, witness: object = None):
        self.witness = witness
        if witness is not None:
            message = f"{message}; witness: {witness}"
        super().__init__(message)


class ResourceLimitError(ReflspanError):
    """A configured size/state/configuration cap was exceeded."""
