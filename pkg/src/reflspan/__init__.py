"""Document spanners with back-references.

A library and CLI for spanners defined by regular languages over an extended
alphabet of terminals, capture markers, and variable references: evaluation
(tuple testing, enumeration, non-emptiness), static analysis (satisfiability,
hierarchicality, functionality, containment), and compilers between core
expressions with string-equality selections and back-reference automata.
"""

from .algebra import (
    CoreExpr,
    check_non_overlapping,
    core_to_refl,
    eval_core,
    fuse_relation,
    nfa_project,
    nfa_union,
    quasi_disjoint_normal_form,
    refl_to_core,
    rel_join,
    rel_project,
    rel_select_eq,
    rel_union,
    split,
)
from .analysis import (
    contains,
    equivalent,
    format_partition,
    parse_partition,
    satisfiable,
    spanner_functional,
    spanner_hierarchical,
    suggest_partition,
)
from .automaton import (
    Nfa,
    NfaBuilder,
    enumerate_words,
    inclusion,
    is_empty,
    nfa_from_text,
    nfa_to_text,
    product,
    shortest_word,
    trim,
)
from .classify import (
    ClassReport,
    VariablePartition,
    check_ref_language,
    check_strongly_ref_extracting,
    check_subword_marked,
    check_tuple_properties,
    classify,
    detect_normalized_order,
    is_normalized_automaton,
    reference_bound,
)
from .errors import (
    AlphabetMismatchError,
    ParseError,
    PreconditionError,
    ReflspanError,
    ResourceLimitError,
)
from .evaluate import (
    Lce,
    build_lce,
    evaluate,
    lce_query,
    nonempty,
    oracle_evaluate,
    test_tuple,
)
from .refx import (
    RefRegexAst,
    compile,
    compile_refregex,
    parse_refregex,
    print_ast,
    read_refx,
    refx_to_nfa,
)
from .spans import (
    ExtSymbol,
    Span,
    SpanRelation,
    SpanTuple,
    SymbolKind,
    ValidOrder,
    Variable,
    span_fuse,
    spans_relation,
    tuple_properties,
)
from .transform import (
    LengthClass,
    length_class_analysis,
    normalize,
    permutation_closure,
    remove_eps_references,
)
from .words import (
    MarkedWord,
    deref,
    format_word,
    is_eps_referencing,
    is_ref_word,
    is_subword_marked_word,
    parse_word,
    spt,
    wrd,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
