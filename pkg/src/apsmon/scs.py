"""Safety context specification for the APS: context transform, action
abstraction, the twelve unsafe-control-action rules and mitigation rules."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import stl

DECREASE, INCREASE, STOP, KEEP = "u1", "u2", "u3", "u4"
ACTIONS = (DECREASE, INCREASE, STOP, KEEP)
DEFAULT_TARGET = 120.0
DEFAULT_EPS_ACTION = 0.05
DEFAULT_EPS_DIOB = 1e-3  # U/min
SCS_SIGNALS = ("BG", "dBG", "IOB", "dIOB", *ACTIONS)

# Table of UCAS rules: id -> (paper-style STL text, hazard)
RULE_TEXT = {
    1: ("G[t0,te]((BG>BGT∧BG'>0)∧(IOB'<0∧IOB<β1)⇒¬u1)", "H2"),
    2: ("G[t0,te]((BG>BGT∧BG'>0)∧(IOB'=0∧IOB<β2)⇒¬u1)", "H2"),
    3: ("G[t0,te]((BG>BGT∧BG'<0)∧(IOB'>0∧IOB<β3)⇒¬u1)", "H2"),
    4: ("G[t0,te]((BG>BGT∧BG'<0)∧(IOB'<0∧IOB<β4)⇒¬u1)", "H2"),
    5: ("G[t0,te]((BG>BGT∧BG'<0)∧(IOB'=0∧IOB<β5)⇒¬u1)", "H2"),
    6: ("G[t0,te]((BG<BGT∧BG'<0)∧(IOB'>0∧IOB>β6)⇒¬u2)", "H1"),
    7: ("G[t0,te]((BG<BGT∧BG'<0)∧(IOB'<0∧IOB>β7)⇒¬u2)", "H1"),
    8: ("G[t0,te]((BG<BGT∧BG'<0)∧(IOB'=0∧IOB>β8)⇒¬u2)", "H1"),
    9: ("G[t0,te](BG>BGT∧IOB<β9⇒¬u3)", "H2"),
    10: ("G[t0,te](BG<β21⇒u3)", "H1"),
    11: ("G[t0,te]((BG>BGT∧BG'>0)∧(IOB'<=0∧IOB<β10)⇒¬u4)", "H2"),
    12: ("G[t0,te]((BG<BGT∧BG'<0)∧(IOB'>=0∧IOB>β11)⇒¬u4)", "H1"),
}

# Hand-written predicate table, independent of the STL engine:
# (BG vs BGT, sign of dBG, band of dIOB, slot signal, slot op, slot, action, forbidden)
_DIRECT = {
    1: (">", 1, "<0", "IOB", "<", "b1", DECREASE, True),
    2: (">", 1, "=0", "IOB", "<", "b2", DECREASE, True),
    3: (">", -1, ">0", "IOB", "<", "b3", DECREASE, True),
    4: (">", -1, "<0", "IOB", "<", "b4", DECREASE, True),
    5: (">", -1, "=0", "IOB", "<", "b5", DECREASE, True),
    6: ("<", -1, ">0", "IOB", ">", "b6", INCREASE, True),
    7: ("<", -1, "<0", "IOB", ">", "b7", INCREASE, True),
    8: ("<", -1, "=0", "IOB", ">", "b8", INCREASE, True),
    9: (">", None, None, "IOB", "<", "b9", STOP, True),
    10: (None, None, None, "BG", "<", "b21", STOP, False),
    11: (">", 1, "<=0", "IOB", "<", "b10", KEEP, True),
    12: ("<", -1, ">=0", "IOB", ">", "b11", KEEP, True),
}


@dataclass(frozen=True)
class ContextVector:
    BG: float
    dBG: float
    IOB: float
    dIOB: float


def context_of(bg: Sequence[float], iob: Sequence[float], t: int, dt: float = 5.0) -> ContextVector:
    """Context at sample ``t``; derivatives by backward difference, zero at t = 0."""
    if t == 0:
        return ContextVector(float(bg[0]), 0.0, float(iob[0]), 0.0)
    return ContextVector(
        float(bg[t]),
        (float(bg[t]) - float(bg[t - 1])) / dt,
        float(iob[t]),
        (float(iob[t]) - float(iob[t - 1])) / dt,
    )


def context_series(bg: Sequence[float], iob: Sequence[float], dt: float = 5.0) -> dict[str, np.ndarray]:
    bg = np.asarray(bg, dtype=float)
    iob = np.asarray(iob, dtype=float)
    dbg = np.zeros_like(bg)
    diob = np.zeros_like(iob)
    dbg[1:] = np.diff(bg) / dt
    diob[1:] = np.diff(iob) / dt
    return {"BG": bg, "dBG": dbg, "IOB": iob, "dIOB": diob}


def classify_action(command: float, basal: float, epsilon: float = DEFAULT_EPS_ACTION) -> str:
    if command < 0:
        raise ValueError(f"command must be >= 0, got {command}")
    if command == 0:
        return STOP
    if command < basal * (1 - epsilon):
        return DECREASE
    if command > basal * (1 + epsilon):
        return INCREASE
    return KEEP


def band(value: float, eps: float) -> int:
    return 0 if abs(value) <= eps else (1 if value > 0 else -1)


def _band_holds(b: int, spec: str) -> bool:
    return {"<0": b < 0, "=0": b == 0, ">0": b > 0, "<=0": b <= 0, ">=0": b >= 0}[spec]


@dataclass(frozen=True)
class UCASRule:
    id: int
    formula: stl.Formula
    hazard: str
    slot: str
    slot_signal: str
    slot_op: str
    action: str
    forbidden: bool
    target: float = DEFAULT_TARGET

    @property
    def orientation(self) -> str:
        return self.slot_op

    @property
    def body(self) -> stl.Implies:
        return self.formula.child

    @property
    def context_formula(self) -> stl.Formula:
        return self.body.left

    def text(self, style: str = "ascii") -> str:
        return stl.to_text(self.formula, style)

    def context_holds(self, ctx: ContextVector, bindings: Mapping[str, float], eps_diob: float = DEFAULT_EPS_DIOB) -> bool:
        """Direct evaluation of the rule's context (all non-action predicates)."""
        bg_rel, dbg_sign, diob_band, sig, op, slot, _, _ = _DIRECT[self.id]
        if bg_rel is not None:
            target = bindings.get("BGT", self.target)
            if not (ctx.BG > target if bg_rel == ">" else ctx.BG < target):
                return False
        if dbg_sign is not None and not (ctx.dBG > 0 if dbg_sign > 0 else ctx.dBG < 0):
            return False
        if diob_band is not None and not _band_holds(band(ctx.dIOB, eps_diob), diob_band):
            return False
        value = getattr(ctx, sig)
        beta = bindings[slot]
        return value < beta if op == "<" else value > beta

    def nonslot_context_holds(self, ctx: ContextVector, bindings: Mapping[str, float], eps_diob: float = DEFAULT_EPS_DIOB) -> bool:
        """Context predicates with the learnable slot predicate dropped."""
        relaxed = dict(bindings)
        relaxed[self.slot] = math.inf if self.slot_op == "<" else -math.inf
        return self.context_holds(ctx, relaxed, eps_diob)

    def action_matches(self, action: str) -> bool:
        """Whether ``action`` is the one this rule flags (rule 10 flags anything but the required stop)."""
        return action == self.action if self.forbidden else action != self.action

    def violated(self, ctx: ContextVector, action: str, bindings: Mapping[str, float], eps_diob: float = DEFAULT_EPS_DIOB) -> bool:
        return self.action_matches(action) and self.context_holds(ctx, bindings, eps_diob)


def default_ruleset(target: float = DEFAULT_TARGET) -> list[UCASRule]:
    """The twelve rules with unresolved slots; ``BGT`` stays symbolic in the formulas."""
    rules = []
    for rid, (text, hazard) in RULE_TEXT.items():
        f = stl.parse(text, SCS_SIGNALS)
        _, _, _, sig, op, slot, action, forbidden = _DIRECT[rid]
        rules.append(UCASRule(rid, f, hazard, slot, sig, op, action, forbidden, target))
    return rules


SLOT_NAMES = tuple(r.slot for r in default_ruleset())


def cawot_thresholds(rules: Sequence[UCASRule] | None = None) -> dict[str, float]:
    """Vacuous IOB bounds and the guideline hypoglycemia limit for the stop rule."""
    rules = default_ruleset() if rules is None else rules
    out = {}
    for r in rules:
        if r.slot_signal == "BG":
            out[r.slot] = 70.0
        else:
            out[r.slot] = math.inf if r.slot_op == "<" else 0.0
    return out


def stl_signal_trace(
    bg: Sequence[float],
    iob: Sequence[float],
    actions: Sequence[str],
    dt: float = 5.0,
    eps_diob: float = DEFAULT_EPS_DIOB,
) -> stl.SignalTrace:
    """Signals for evaluating SCS formulas; dIOB is snapped to 0 inside the tolerance band."""
    cols = context_series(bg, iob, dt)
    cols["dIOB"] = np.where(np.abs(cols["dIOB"]) <= eps_diob, 0.0, cols["dIOB"])
    acts = np.asarray(actions)
    for u in ACTIONS:
        cols[u] = (acts == u).astype(float)
    return stl.SignalTrace(cols, dt)


# -- hazard mitigation specification -------------------------------------------

@dataclass(frozen=True)
class HMSRule:
    context: stl.Formula
    actions: tuple[str, ...]
    deadline: float
    hazard: str

    @property
    def formula(self) -> stl.Formula:
        if len(self.actions) == 1:
            act = stl.Prop(self.actions[0])
        else:
            act = stl.Or(tuple(stl.Prop(a) for a in self.actions))
        return stl.Globally(0.0, math.inf, stl.Since(stl.Eventually(0.0, self.deadline, act), self.context))


def hms_deadline(tth_minutes: Sequence[float], percentile: float = 10.0, dt: float = 5.0) -> float:
    """Mitigation deadline from a campaign's time-to-hazard distribution (rounded down to the grid)."""
    values = [v for v in tth_minutes if v is not None and v >= 0]
    if not values:
        raise ValueError("no non-negative time-to-hazard values")
    return max(dt, math.floor(float(np.percentile(values, percentile)) / dt) * dt)


def default_hms(rules: Sequence[UCASRule] | None = None, deadline: float = 60.0) -> list[HMSRule]:
    """One mitigation rule per UCAS context: stop insulin for H1 contexts, increase it for H2."""
    rules = default_ruleset() if rules is None else rules
    out = []
    for r in rules:
        actions = (STOP,) if r.hazard == "H1" else (INCREASE,)
        out.append(HMSRule(r.context_formula, actions, deadline, r.hazard))
    return out


# -- threshold files -------------------------------------------------------------

def _encode(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _decode(v) -> float:
    return float(v)


def training_hash(ids: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(sorted(ids)).encode()).hexdigest()[:16]


@dataclass
class ThresholdSet:
    slots: dict[str, float]
    provenance: dict = field(default_factory=dict)

    def bindings(self, target: float = DEFAULT_TARGET) -> dict[str, float]:
        return {**self.slots, "BGT": target}

    def to_json(self) -> str:
        payload = {"slots": {k: _encode(v) for k, v in sorted(self.slots.items(), key=lambda kv: _slot_key(kv[0]))},
                   "provenance": self.provenance}
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSet":
        data = json.loads(text)
        return cls({k: _decode(v) for k, v in data["slots"].items()}, data.get("provenance", {}))

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdSet":
        return cls.from_json(Path(path).read_text())


def _slot_key(name: str):
    return (0, int(name[1:])) if name[1:].isdigit() else (1, name)
