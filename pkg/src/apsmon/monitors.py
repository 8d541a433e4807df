"""Runtime safety monitors and the fixed-dose mitigation policy.

Every monitor offers two entry points that must agree: ``observe`` for the
live loop (one sample at a time) and ``evaluate`` for offline replay over
whole arrays.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import scs
from .glucose import (
    PatientParams,
    PatientState,
    steady_basal,
    step,
    units_per_hour_to_micro_units_per_min,
)

MONITOR_NAMES = ("cawt", "cawot", "guideline", "mpc")
SAFE_LOW, SAFE_HIGH = 70.0, 180.0


@dataclass(frozen=True)
class Verdict:
    hazard: str | None = None  # "H1" | "H2" when unsafe
    source: str = ""

    def __post_init__(self):
        if self.hazard not in (None, "H1", "H2"):
            raise ValueError(f"invalid hazard type {self.hazard!r}")
        if self.hazard is None and self.source:
            raise ValueError("a safe verdict carries no source")

    @property
    def unsafe(self) -> bool:
        return self.hazard is not None

    @property
    def code(self) -> str:
        """Trace encoding: empty when safe, else ``H<k>:<source>``."""
        return f"{self.hazard}:{self.source}" if self.hazard else ""

    @classmethod
    def from_code(cls, code: str) -> "Verdict":
        if not code:
            return SAFE
        hazard, source = code.split(":", 1)
        return cls(hazard, source)


SAFE = Verdict()


def _verdicts(codes: Sequence[str]) -> list[Verdict]:
    return [Verdict.from_code(c) for c in codes]


class UnresolvedThresholdError(ValueError):
    pass


class ContextAwareMonitor:
    """UCAS rule checker; CAWT with learned slots, CAWOT with the vacuous defaults."""

    def __init__(
        self,
        thresholds: Mapping[str, float],
        basal_rate: float,
        target: float = scs.DEFAULT_TARGET,
        rules: Sequence[scs.UCASRule] | None = None,
        eps_action: float = scs.DEFAULT_EPS_ACTION,
        eps_diob: float = scs.DEFAULT_EPS_DIOB,
        dt: float = 5.0,
        name: str = "cawt",
    ):
        self.rules = list(rules) if rules is not None else scs.default_ruleset(target)
        missing = [r.slot for r in self.rules if r.slot not in thresholds]
        if missing:
            raise UnresolvedThresholdError(f"unresolved slots: {', '.join(missing)}")
        bad = [k for k, v in thresholds.items() if math.isnan(v)]
        if bad:
            raise UnresolvedThresholdError(f"NaN thresholds: {', '.join(bad)}")
        self.bindings = {**{r.slot: float(thresholds[r.slot]) for r in self.rules}, "BGT": float(target)}
        self.basal_rate = basal_rate
        self.eps_action = eps_action
        self.eps_diob = eps_diob
        self.dt = dt
        self.name = name
        self.reset()

    def reset(self):
        self._prev: tuple[float, float] | None = None

    def check(self, ctx: scs.ContextVector, action: str) -> Verdict:
        for rule in self.rules:
            if rule.violated(ctx, action, self.bindings, self.eps_diob):
                return Verdict(rule.hazard, f"r{rule.id}")
        return SAFE

    def observe(self, bg: float, iob: float, command: float) -> Verdict:
        if self._prev is None:
            ctx = scs.ContextVector(bg, 0.0, iob, 0.0)
        else:
            pbg, piob = self._prev
            ctx = scs.ContextVector(bg, (bg - pbg) / self.dt, iob, (iob - piob) / self.dt)
        self._prev = (bg, iob)
        return self.check(ctx, scs.classify_action(command, self.basal_rate, self.eps_action))

    def rule_masks(self, bg, iob, command) -> dict[int, np.ndarray]:
        """Per-rule firing masks over a whole trace."""
        c = scs.context_series(bg, iob, self.dt)
        cmd = np.asarray(command, dtype=float)
        b = self.basal_rate
        action = np.where(cmd == 0, scs.STOP, np.where(cmd < b * (1 - self.eps_action), scs.DECREASE,
                          np.where(cmd > b * (1 + self.eps_action), scs.INCREASE, scs.KEEP)))
        diob_band = np.where(np.abs(c["dIOB"]) <= self.eps_diob, 0, np.sign(c["dIOB"]))
        target = self.bindings["BGT"]
        band_ok = {"<0": diob_band < 0, "=0": diob_band == 0, ">0": diob_band > 0,
                   "<=0": diob_band <= 0, ">=0": diob_band >= 0}
        out = {}
        for rule in self.rules:
            bg_rel, dbg_sign, diob_spec, sig, op, slot, _, _ = scs._DIRECT[rule.id]
            m = (action == rule.action) if rule.forbidden else (action != rule.action)
            if bg_rel == ">":
                m = m & (c["BG"] > target)
            elif bg_rel == "<":
                m = m & (c["BG"] < target)
            if dbg_sign is not None:
                m = m & ((c["dBG"] > 0) if dbg_sign > 0 else (c["dBG"] < 0))
            if diob_spec is not None:
                m = m & band_ok[diob_spec]
            beta = self.bindings[slot]
            m = m & ((c[sig] < beta) if op == "<" else (c[sig] > beta))
            out[rule.id] = m
        return out

    def evaluate(self, bg, iob, command) -> list[str]:
        masks = self.rule_masks(bg, iob, command)
        n = len(np.asarray(bg))
        codes = [""] * n
        # Later rules first so that the first matching rule wins.
        for rule in reversed(self.rules):
            for t in np.flatnonzero(masks[rule.id]):
                codes[t] = f"{rule.hazard}:r{rule.id}"
        return codes


def cawt(thresholds: Mapping[str, float], basal_rate: float, target: float = scs.DEFAULT_TARGET, **kw) -> ContextAwareMonitor:
    return ContextAwareMonitor(thresholds, basal_rate, target, name="cawt", **kw)


def cawot(basal_rate: float, target: float = scs.DEFAULT_TARGET, **kw) -> ContextAwareMonitor:
    return ContextAwareMonitor(scs.cawot_thresholds(), basal_rate, target, name="cawot", **kw)


# -- guideline monitor -------------------------------------------------------------

GUIDELINE_RULES = (
    "G[t0,te]((BG > 70) && (BG < 180))",
    "G[t0,te]((deltaBG > -5) && (deltaBG < 3))",
    "G[t0,te](BG < ?lambda10 -> F[0,25](BG > ?lambda10))",
    "G[t0,te](BG > ?lambda90 -> F[0,25](BG < ?lambda90))",
)


@dataclass(frozen=True)
class GuidelineConfig:
    lambda10: float
    lambda90: float
    alpha: float = 25.0
    dt: float = 5.0

    def __post_init__(self):
        if not self.lambda10 < self.lambda90:
            raise ValueError(f"need lambda10 < lambda90, got {self.lambda10}, {self.lambda90}")
        ratio = self.alpha / self.dt
        if self.alpha < 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("alpha must be a non-negative multiple of dt")

    @property
    def alpha_steps(self) -> int:
        return int(round(self.alpha / self.dt))

    @classmethod
    def from_traces(cls, bg_series: Sequence[Sequence[float]], alpha: float = 25.0, dt: float = 5.0) -> "GuidelineConfig":
        """Percentile bounds of a patient's fault-free glucose."""
        values = np.concatenate([np.asarray(b, dtype=float) for b in bg_series])
        lo, hi = np.percentile(values, [10, 90])
        if not lo < hi:
            hi = lo + 1e-6
        return cls(float(lo), float(hi), alpha, dt)


class GuidelineMonitor:
    """Medical-guideline rules. The percentile-recovery rules are judged causally:
    an excursion starting at ``s`` is flagged at ``s + alpha`` if it never recovered."""

    name = "guideline"

    def __init__(self, config: GuidelineConfig):
        self.config = config
        self.reset()

    def reset(self):
        a = self.config.alpha_steps
        self._hist: deque[float] = deque(maxlen=a + 1)
        self._below = 0  # consecutive samples with BG <= lambda10
        self._above = 0  # consecutive samples with BG >= lambda90

    def observe(self, bg: float, iob: float = 0.0, command: float = 0.0) -> Verdict:
        cfg = self.config
        prev = self._hist[-1] if self._hist else bg
        self._hist.append(bg)
        self._below = self._below + 1 if bg <= cfg.lambda10 else 0
        self._above = self._above + 1 if bg >= cfg.lambda90 else 0
        if bg <= SAFE_LOW:
            return Verdict("H1", "phi1")
        if bg >= SAFE_HIGH:
            return Verdict("H2", "phi1")
        delta = bg - prev
        if delta <= -5:
            return Verdict("H1", "phi2")
        if delta >= 3:
            return Verdict("H2", "phi2")
        a = cfg.alpha_steps
        if len(self._hist) == a + 1:
            start = self._hist[0]
            if self._below >= a + 1 and start < cfg.lambda10:
                return Verdict("H1", "phi3")
            if self._above >= a + 1 and start > cfg.lambda90:
                return Verdict("H2", "phi4")
        return SAFE

    def evaluate(self, bg, iob=None, command=None) -> list[str]:
        self.reset()
        out = [self.observe(float(v)).code for v in np.asarray(bg, dtype=float)]
        self.reset()
        return out


# -- model-predictive monitor --------------------------------------------------------

def _predict(params: PatientParams, g, isc, ip, ieff, flow, steps: int, dt: float, substeps: int = 5):
    """Vectorized RK4 forecast; returns glucose of shape (steps, n)."""
    gezi, egp, p2 = params.gezi, params.egp, params.p2
    p2si = p2 * params.si
    inv_tau1, inv_tau2 = 1.0 / params.tau1, 1.0 / params.tau2
    inflow = flow / (params.tau1 * params.clearance_ml)
    h = dt / substeps
    out = np.empty((steps, np.size(g)))

    def rhs(g, s, p, e):
        return (-(gezi + e) * g + egp, inflow - s * inv_tau1, (s - p) * inv_tau2, p2si * p - p2 * e)

    y = [np.array(g, dtype=float), np.array(isc, dtype=float), np.array(ip, dtype=float), np.array(ieff, dtype=float)]
    for k in range(steps):
        for _ in range(substeps):
            k1 = rhs(*y)
            k2 = rhs(*(a + 0.5 * h * b for a, b in zip(y, k1)))
            k3 = rhs(*(a + 0.5 * h * b for a, b in zip(y, k2)))
            k4 = rhs(*(a + h * b for a, b in zip(y, k3)))
            y = [a + h / 6.0 * (b + 2.0 * c + 2.0 * d + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
        y[0] = np.maximum(y[0], 10.0)
        out[k] = y[0]
    return out


class MPCMonitor:
    """Forecasts glucose under the observed command with a population model.

    The insulin compartments of the internal model are driven by the observed
    commands; glucose is re-anchored to the measured BG at every step.
    """

    name = "mpc"

    def __init__(self, model: PatientParams, target: float = scs.DEFAULT_TARGET, horizon: float = 240.0, dt: float = 5.0):
        self.model = model
        self.target = target
        self.horizon_steps = max(1, int(round(horizon / dt)))
        self.dt = dt
        self.reset()

    def reset(self):
        flow = steady_basal(self.model, self.target)
        plasma = flow / self.model.clearance_ml
        self._ins = (plasma, plasma, self.model.si * plasma)

    def _verdicts(self, forecast: np.ndarray) -> list[str]:
        codes = []
        low = forecast < SAFE_LOW
        high = forecast > SAFE_HIGH
        for j in range(forecast.shape[1]):
            lo = np.flatnonzero(low[:, j])
            hi = np.flatnonzero(high[:, j])
            first_lo = lo[0] if lo.size else math.inf
            first_hi = hi[0] if hi.size else math.inf
            if first_lo == first_hi == math.inf:
                codes.append("")
            else:
                codes.append("H1:mpc" if first_lo < first_hi else "H2:mpc")
        return codes

    def _advance(self, bg: float, command: float):
        flow = units_per_hour_to_micro_units_per_min(command)
        s, _ = step(PatientState(bg, *self._ins), self.model, flow, dt=self.dt)
        self._ins = (s.I_SC, s.I_P, s.I_EFF)

    def observe(self, bg: float, iob: float, command: float) -> Verdict:
        flow = units_per_hour_to_micro_units_per_min(command)
        f = _predict(self.model, [bg], [self._ins[0]], [self._ins[1]], [self._ins[2]], np.array([flow]), self.horizon_steps, self.dt)
        self._advance(bg, command)
        return Verdict.from_code(self._verdicts(f)[0])

    def evaluate(self, bg, iob, command) -> list[str]:
        bg = np.asarray(bg, dtype=float)
        cmd = np.asarray(command, dtype=float)
        self.reset()
        states = []
        for g, c in zip(bg, cmd):
            states.append(self._ins)
            self._advance(float(g), float(c))
        self.reset()
        isc, ip, ieff = (np.array(v) for v in zip(*states))
        flow = np.array([units_per_hour_to_micro_units_per_min(float(c)) for c in cmd])
        return self._verdicts(_predict(self.model, bg, isc, ip, ieff, flow, self.horizon_steps, self.dt))


# -- mitigation ------------------------------------------------------------------

@dataclass(frozen=True)
class MitigationConfig:
    max_corrective_insulin: float
    pump_max: float
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.max_corrective_insulin <= self.pump_max:
            raise ValueError("max_corrective_insulin must lie in [0, pump max]")


class Mitigator:
    """Stop insulin on H1, deliver the fixed maximum on H2, and hold the
    correction until no rule fires and BG is back in [70, 180]."""

    def __init__(self, config: MitigationConfig):
        self.config = config
        self.reset()

    def reset(self):
        self.latched: str | None = None

    def apply(self, verdict: Verdict, bg: float, command: float) -> tuple[float, bool]:
        if not self.config.enabled:
            return command, False
        if verdict.unsafe:
            self.latched = verdict.hazard
        elif self.latched is not None and SAFE_LOW <= bg <= SAFE_HIGH:
            self.latched = None
        if self.latched is None:
            return command, False
        return (0.0 if self.latched == "H1" else self.config.max_corrective_insulin), True


def replay(monitor, bg, iob, command) -> list[str]:
    """Live-mode verdicts over a recorded trace, sample by sample."""
    monitor.reset()
    out = [monitor.observe(float(b), float(i), float(c)).code for b, i, c in zip(bg, iob, command)]
    monitor.reset()
    return out
