"""Discrete-time STL semantics over uniformly sampled traces.

Interval bounds are in time units and cover the samples ``k`` with
``lo <= k*dt <= hi``. Windows are truncated at the end of the trace: an
empty ``G`` window is vacuously true, an empty ``F`` window is false.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .ast import STRICT, Atom, Const, Eventually, Formula, Globally, Implies, Not, Or, And, Prop, Since, Slot


class UnresolvedSlotError(KeyError):
    pass


@dataclass(frozen=True)
class SignalTrace:
    signals: Mapping[str, np.ndarray]
    dt: float = 5.0

    def __post_init__(self):
        lengths = {len(v) for v in self.signals.values()}
        if len(lengths) > 1:
            raise ValueError(f"signals differ in length: {sorted(lengths)}")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")

    @classmethod
    def from_columns(cls, dt: float = 5.0, **columns) -> "SignalTrace":
        return cls({k: np.asarray(v, dtype=float) for k, v in columns.items()}, dt)

    def __len__(self) -> int:
        return len(next(iter(self.signals.values()))) if self.signals else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.signals[name]
        except KeyError:
            raise KeyError(f"trace has no signal {name!r}") from None


def sample_window(lo: float, hi: float, dt: float) -> tuple[int, float]:
    """Inclusive sample offsets covered by the time interval [lo, hi]."""
    eps = 1e-9
    a = math.ceil(lo / dt - eps)
    b = math.inf if math.isinf(hi) else math.floor(hi / dt + eps)
    return a, b


def resolve_threshold(thr, bindings: Mapping[str, float] | None) -> float:
    if isinstance(thr, (Slot, Const)):
        if bindings is None or thr.name not in bindings:
            kind = "slot" if isinstance(thr, Slot) else "constant"
            raise UnresolvedSlotError(f"unresolved {kind} {thr.name!r}")
        return float(bindings[thr.name])
    return float(thr)


def compare(values, op: str, threshold: float):
    if op == "<":
        return values < threshold
    if op == "<=":
        return values <= threshold
    if op == ">":
        return values > threshold
    if op == ">=":
        return values >= threshold
    return values == threshold


def satisfaction(f: Formula, trace: SignalTrace, bindings: Mapping[str, float] | None = None) -> np.ndarray:
    """Boolean satisfaction at every sample of the trace."""
    n = len(trace)
    if isinstance(f, Atom):
        return compare(np.asarray(trace[f.signal], dtype=float), f.op, resolve_threshold(f.threshold, bindings))
    if isinstance(f, Prop):
        return np.asarray(trace[f.signal]) != 0
    if isinstance(f, Not):
        return ~satisfaction(f.child, trace, bindings)
    if isinstance(f, And):
        out = np.ones(n, dtype=bool)
        for c in f.children:
            out &= satisfaction(c, trace, bindings)
        return out
    if isinstance(f, Or):
        out = np.zeros(n, dtype=bool)
        for c in f.children:
            out |= satisfaction(c, trace, bindings)
        return out
    if isinstance(f, Implies):
        return ~satisfaction(f.left, trace, bindings) | satisfaction(f.right, trace, bindings)
    if isinstance(f, (Globally, Eventually)):
        child = satisfaction(f.child, trace, bindings)
        a, b = sample_window(f.lo, f.hi, trace.dt)
        t = np.arange(n)
        lo = t + a
        hi = np.minimum(t + b, n - 1) if not math.isinf(b) else np.full(n, n - 1)
        empty = lo > hi
        lo_c = np.minimum(lo, n)
        hi_c = np.clip(hi, -1, n - 1)
        if isinstance(f, Globally):
            bad = np.concatenate([[0], np.cumsum(~child)])
            count = bad[hi_c + 1] - bad[lo_c]
            return empty | (count == 0)
        good = np.concatenate([[0], np.cumsum(child)])
        count = good[hi_c + 1] - good[lo_c]
        return ~empty & (count > 0)
    if isinstance(f, Since):
        left = satisfaction(f.left, trace, bindings)
        right = satisfaction(f.right, trace, bindings)
        out = np.zeros(n, dtype=bool)
        held = False
        for t in range(n):
            held = bool(right[t]) or (held and bool(left[t]))
            out[t] = held
        return out
    raise TypeError(f"not a formula: {f!r}")


def eval_bool(f: Formula, trace: SignalTrace, t: int, bindings: Mapping[str, float] | None = None) -> bool:
    if not 0 <= t < len(trace):
        raise IndexError(f"t={t} outside trace of length {len(trace)}")
    return bool(satisfaction(f, trace, bindings)[t])


def atom_robustness(atom: Atom, value: float, bindings: Mapping[str, float] | None = None) -> float:
    """Signed margin of an ordering atom at a signal value."""
    if not isinstance(atom, Atom):
        raise TypeError("robustness is defined for atoms only")
    if atom.op == "==":
        raise ValueError("equality atoms have no robustness; use boolean evaluation")
    beta = resolve_threshold(atom.threshold, bindings)
    return value - beta if atom.op in (">", ">=") else beta - value


def robustness(atom: Atom, trace: SignalTrace, t: int, bindings: Mapping[str, float] | None = None) -> float:
    return atom_robustness(atom, float(trace[atom.signal][t]), bindings)


def satisfied_by_margin(atom: Atom, r: float) -> bool:
    """Boolean verdict implied by a robustness value: r = 0 satisfies only non-strict comparators."""
    return r > 0 or (r == 0 and atom.op not in STRICT)
