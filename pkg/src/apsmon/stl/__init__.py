"""Bounded-time signal temporal logic: syntax, parsing and discrete semantics."""
from .ast import (
    And,
    Atom,
    Const,
    Eventually,
    Formula,
    Globally,
    Implies,
    Not,
    Or,
    Prop,
    Since,
    Slot,
    constants,
    signals,
    slots,
    substitute,
    walk,
)
from .parser import STLSyntaxError, UnknownSignalError, parse, parse_rule_file, to_text
from .semantics import (
    SignalTrace,
    UnresolvedSlotError,
    atom_robustness,
    eval_bool,
    robustness,
    satisfaction,
    satisfied_by_margin,
)

__all__ = [
    "And", "Atom", "Const", "Eventually", "Formula", "Globally", "Implies", "Not", "Or", "Prop", "Since",
    "Slot", "constants", "signals", "slots", "substitute", "walk",
    "STLSyntaxError", "UnknownSignalError", "parse", "parse_rule_file", "to_text",
    "SignalTrace", "UnresolvedSlotError", "atom_robustness", "eval_bool", "robustness", "satisfaction",
    "satisfied_by_margin",
]
