"""Bounded-time STL abstract syntax."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Union

COMPARATORS = ("<", "<=", ">", ">=", "==")
STRICT = ("<", ">")


@dataclass(frozen=True)
class Slot:
    """Learnable threshold, written ``?name`` (or ``β<n>`` / ``λ<n>``)."""

    name: str


@dataclass(frozen=True)
class Const:
    """Named constant bound at evaluation time (e.g. ``BGT``)."""

    name: str


Threshold = Union[float, Slot, Const]


@dataclass(frozen=True)
class Atom:
    signal: str
    op: str
    threshold: Threshold

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.op!r}")


@dataclass(frozen=True)
class Prop:
    """Boolean signal: true where the sample is non-zero."""

    signal: str


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Globally:
    lo: float
    hi: float
    child: "Formula"

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


@dataclass(frozen=True)
class Eventually:
    lo: float
    hi: float
    child: "Formula"

    def __post_init__(self):
        _check_interval(self.lo, self.hi)


@dataclass(frozen=True)
class Since:
    """``left S right``: right held at some t' <= t and left held on (t', t]."""

    left: "Formula"
    right: "Formula"


Formula = Union[Atom, Prop, Not, And, Or, Implies, Globally, Eventually, Since]


def _check_interval(lo: float, hi: float):
    if not (0 <= lo <= hi) or math.isnan(lo) or math.isnan(hi) or math.isinf(lo):
        raise ValueError(f"invalid interval [{lo}, {hi}]")


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, (Atom, Prop)):
        return ()
    if isinstance(f, (Not, Globally, Eventually)):
        return (f.child,)
    if isinstance(f, (And, Or)):
        return f.children
    return (f.left, f.right)


def walk(f: Formula) -> Iterator[Formula]:
    yield f
    for c in children(f):
        yield from walk(c)


def slots(f: Formula) -> set[str]:
    return {a.threshold.name for a in walk(f) if isinstance(a, Atom) and isinstance(a.threshold, Slot)}


def constants(f: Formula) -> set[str]:
    return {a.threshold.name for a in walk(f) if isinstance(a, Atom) and isinstance(a.threshold, Const)}


def signals(f: Formula) -> set[str]:
    return {a.signal for a in walk(f) if isinstance(a, (Atom, Prop))}


def substitute(f: Formula, bindings: dict[str, float]) -> Formula:
    """Replace bound slots/constants by literals."""
    if isinstance(f, Atom):
        thr = f.threshold
        if isinstance(thr, (Slot, Const)) and thr.name in bindings:
            return Atom(f.signal, f.op, float(bindings[thr.name]))
        return f
    if isinstance(f, Prop):
        return f
    if isinstance(f, Not):
        return Not(substitute(f.child, bindings))
    if isinstance(f, And):
        return And(tuple(substitute(c, bindings) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(substitute(c, bindings) for c in f.children))
    if isinstance(f, Implies):
        return Implies(substitute(f.left, bindings), substitute(f.right, bindings))
    if isinstance(f, Globally):
        return Globally(f.lo, f.hi, substitute(f.child, bindings))
    if isinstance(f, Eventually):
        return Eventually(f.lo, f.hi, substitute(f.child, bindings))
    return Since(substitute(f.left, bindings), substitute(f.right, bindings))
