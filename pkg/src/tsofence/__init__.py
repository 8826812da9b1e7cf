"""Safety verification and fence synthesis under store-buffer semantics."""

from importlib import resources
from pathlib import Path

from .explore import (
    BoundExhausted,
    BudgetExceeded,
    ReachResult,
    SafeAtFixedPoint,
    Trace,
    UnsafeSC,
    UnsafeTSO,
    fixed_point_search,
    reach_k,
    replay,
)
from .fences import (
    build_relations,
    choose_delay_set,
    choose_fence_positions,
    find_critical_cycles,
    insert_fences,
    synthesize,
)
from .model import Program, ValidationError, pretty, validate
from .parser import ParseError, parse_program, parse_spec_clause
from .rewrite import constant_write_transform
from .semantics import Machine, State, project
from .symbolic import (
    LabelRegistry,
    SymMachine,
    export_trace_automaton,
    sc_interpret,
    symbolic_reach,
)


def corpus_dir() -> Path:
    """Directory of the shipped benchmark programs."""
    return Path(resources.files("tsofence") / "corpus")


__all__ = [
    "BoundExhausted", "BudgetExceeded", "LabelRegistry", "Machine",
    "ParseError", "Program", "ReachResult", "SafeAtFixedPoint", "State",
    "SymMachine", "Trace", "UnsafeSC", "UnsafeTSO", "ValidationError",
    "build_relations", "choose_delay_set", "choose_fence_positions",
    "constant_write_transform", "corpus_dir", "export_trace_automaton",
    "find_critical_cycles", "fixed_point_search", "insert_fences",
    "parse_program", "parse_spec_clause", "pretty", "project", "reach_k",
    "replay", "sc_interpret", "symbolic_reach", "synthesize", "validate",
]
