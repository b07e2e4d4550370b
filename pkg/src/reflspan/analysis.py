"""Static analysis of back-reference spanners.

Satisfiability reduces to automaton emptiness; hierarchicality and
functionality delegate to the language-level classifiers.  Containment and
equivalence are decided for strongly reference extracting spanners by
normalizing both sides with a common marker order and checking plain language
inclusion, which is exact for that class.
"""

from __future__ import annotations

from .automaton import DEFAULT_SUBSET_CAP, Nfa, inclusion, is_empty
from .classify import (
    VariablePartition,
    check_ref_language,
    check_strongly_ref_extracting,
    check_tuple_properties,
    ref_language_witness,
)
from .errors import ParseError, PreconditionError
from .spans import SymbolKind, ValidOrder, Variable
from .transform import normalize
from .words import format_word


def _require_ref_language(m: Nfa) -> None:
    w = ref_language_witness(m)
    if w is not None:
        raise PreconditionError("language is not a ref-language", format_word(w))


def satisfiable(m: Nfa) -> bool:
    """Some document has a non-empty relation; equivalent to language non-emptiness.

    Runs in time linear in the automaton; the ref-language contract is the
    caller's responsibility here, matching the linear-time guarantee.
    """
    return not is_empty(m)


def spanner_hierarchical(m: Nfa) -> bool:
    """Hierarchicality of the marker structure of the underlying language."""
    _require_ref_language(m)
    return check_tuple_properties(m)["hierarchical"]


def spanner_functional(m: Nfa) -> bool:
    _require_ref_language(m)
    return check_tuple_properties(m)["functional"]


def _normalized_strongly_extracting(
    m: Nfa, p: VariablePartition, ord: ValidOrder, max_states: int
) -> Nfa:
    ok, witness = check_strongly_ref_extracting(m, p)
    if not ok:
        detail = witness if isinstance(witness, str) else format_word(witness)
        raise PreconditionError("spanner is not strongly reference extracting", detail)
    normalized = normalize(m, ord, max_states)
    # normalization only reorders marker runs, so the discipline must survive;
    # re-verify and surface any discrepancy as a bug rather than proceed
    ok, witness = check_strongly_ref_extracting(normalized, p)
    if not ok:
        raise AssertionError("normalization broke the reference-extraction discipline")
    return normalized


def contains(
    m1: Nfa,
    m2: Nfa,
    p: VariablePartition,
    ord: ValidOrder | None = None,
    max_configs: int = DEFAULT_SUBSET_CAP,
) -> bool:
    """Whether the first spanner's relation is contained in the second's, everywhere.

    Both inputs must be strongly reference extracting over the same partition;
    after normalizing with a shared order, spanner containment coincides with
    language inclusion.
    """
    if not m1.same_alphabet(m2):
        raise PreconditionError("containment requires identical alphabet declarations")
    if ord is None:
        ord = ValidOrder.default_for(m1.vars)
    n1 = _normalized_strongly_extracting(m1, p, ord, max_configs)
    n2 = _normalized_strongly_extracting(m2, p, ord, max_configs)
    return inclusion(n1, n2, max_configs)


def equivalent(
    m1: Nfa,
    m2: Nfa,
    p: VariablePartition,
    ord: ValidOrder | None = None,
    max_configs: int = DEFAULT_SUBSET_CAP,
) -> bool:
    return contains(m1, m2, p, ord, max_configs) and contains(m2, m1, p, ord, max_configs)


def suggest_partition(m: Nfa) -> VariablePartition | None:
    """Guess which variables are extraction wrappers from the definition shapes.

    A variable qualifies as an extractor of ``x`` when it is never referenced
    and every definition of it holds exactly one reference, always of ``x``.
    Returns None when no consistent assignment exists; ambiguity is resolved
    in favour of content variables.
    """
    ok, _ = check_ref_language(m)
    if not ok:
        return None
    from .classify import _extractor_shape_patterns, _first_witness

    referenced = {
        label.value for _, label, _ in m.transitions if label is not None and label.kind is SymbolKind.REF
    }
    extractors: dict[Variable, set[Variable]] = {}
    assigned: set[Variable] = set()
    for y in sorted(m.vars):
        if y in referenced:
            continue
        candidates = [
            x
            for x in sorted(referenced)
            if x != y and _first_witness(m, _extractor_shape_patterns(x, y)) is None
        ]
        if len(candidates) == 1:
            extractors.setdefault(candidates[0], set()).add(y)
            assigned.add(y)
    refs = frozenset(m.vars - assigned)
    partition = VariablePartition.of(refs, {x: ys for x, ys in extractors.items()})
    try:
        partition.validate_for(m.vars)
    except PreconditionError:
        return None
    return partition


def parse_partition(text: str) -> VariablePartition:
    """Config format: one ``ref x`` or ``extractor y of x`` directive per line."""
    refs: set[Variable] = set()
    extractors: dict[Variable, set[Variable]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "ref" and len(parts) == 2:
            refs.add(parts[1])
        elif parts[0] == "extractor" and len(parts) == 4 and parts[2] == "of":
            extractors.setdefault(parts[3], set()).add(parts[1])
        else:
            raise ParseError(f"cannot parse partition line {lineno}: {raw!r}")
    for x in extractors:
        refs.add(x)
    return VariablePartition.of(refs, extractors)


def format_partition(p: VariablePartition) -> str:
    lines = [f"ref {x}" for x in sorted(p.refs)]
    for x, ys in p.extractors:
        for y in sorted(ys):
            lines.append(f"extractor {y} of {x}")
    return "\n".join(lines) + "\n"
