"""Reference APS controllers and insulin-on-board bookkeeping.

Both controllers act on *net* IOB: insulin on board above what the
scheduled basal alone would keep on board. With total IOB the basal
itself would look like a pending correction and the controllers would
suspend at target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .glucose import PatientParams, micro_units_per_min_to_units_per_hour, steady_basal

CONTROLLER_NAMES = ("openaps-like", "basal-bolus")
PREDICTION_HORIZON_MIN = 30.0


@dataclass(frozen=True)
class ControllerConfig:
    basal_rate: float  # U/h
    cf: float  # mg/dl per U
    target: float = 120.0  # mg/dl
    max_rate: float = 5.0  # U/h
    dia: float = 240.0  # min
    epsilon_action: float = 0.05
    hypo_cutoff: float = 70.0
    bolus_scale: float = 1.0
    dt: float = 5.0

    def __post_init__(self):
        if not 0 < self.basal_rate <= self.max_rate:
            raise ValueError(f"need 0 < basal_rate <= max_rate, got {self.basal_rate}, {self.max_rate}")
        if self.cf <= 0:
            raise ValueError("correction factor must be > 0")
        if not 70 <= self.target <= 180:
            raise ValueError(f"target must lie in [70, 180], got {self.target}")
        if self.dia < 60:
            raise ValueError("DIA must be >= 60 min")
        if not 0 < self.epsilon_action < 0.5:
            raise ValueError("epsilon_action must lie in (0, 0.5)")

    @property
    def decay_per_step(self) -> float:
        return iob_decay(self.dt, self.dia)

    @property
    def basal_iob(self) -> float:
        """Steady-state IOB under the scheduled basal alone."""
        return (self.basal_rate * self.dt / 60.0) / (1.0 - self.decay_per_step)

    @classmethod
    def for_patient(cls, params: PatientParams, target: float = 120.0, max_factor: float = 4.0, **kw) -> "ControllerConfig":
        """Basal from the patient's steady state, CF from the model's glucose drop per unit."""
        basal = micro_units_per_min_to_units_per_hour(steady_basal(params, target))
        # Integrated plasma insulin of 1 U is 1e6/C_I µU·min/ml; glucose drop ~ G * S_I * that.
        cf = target * params.si * 1e6 / params.clearance_ml
        return cls(basal_rate=basal, cf=cf, target=target, max_rate=max_factor * basal, **kw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def iob_decay(dt: float, dia: float) -> float:
    """Per-step decay factor: exponential with half-life DIA/2."""
    return math.exp(-dt * math.log(2.0) / (dia / 2.0))


@dataclass(frozen=True)
class IOBState:
    iob: float = 0.0
    time: float = 0.0
    history: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def decayed_history_sum(self, dia: float) -> float:
        return sum(dose * iob_decay(self.time - t, dia) for t, dose in self.history)


def iob_update(state: IOBState, delivered_dose: float, dt: float, dia: float) -> IOBState:
    """Decay existing IOB over ``dt`` and add the dose delivered at the new time."""
    if delivered_dose < 0:
        raise ValueError(f"delivered dose must be >= 0, got {delivered_dose}")
    now = state.time + dt
    return IOBState(
        iob=state.iob * iob_decay(dt, dia) + delivered_dose,
        time=now,
        history=state.history + ((now, delivered_dose),),
    )


def _iob_value(iob: "float | IOBState") -> float:
    return iob.iob if isinstance(iob, IOBState) else float(iob)


def _clamp(value: float, lo: float, hi: float) -> float:
    return lo if value < lo else hi if value > hi else value


def basal_bolus_step(bg: float, config: ControllerConfig, iob: "float | IOBState") -> float:
    """Basal plus a correction dose above net IOB, spread over one control step (U/h)."""
    if bg <= 0:
        raise ValueError("BG must be > 0")
    if bg < config.hypo_cutoff:
        return 0.0
    net_iob = _iob_value(iob) - config.basal_iob
    correction = max(0.0, (bg - config.target) / config.cf - net_iob)
    command = config.basal_rate + correction * (60.0 / config.dt) * config.bolus_scale
    return _clamp(command, 0.0, config.max_rate)


def eventual_bg(bg: float, trend: float, config: ControllerConfig, iob: "float | IOBState") -> float:
    return bg + trend * PREDICTION_HORIZON_MIN - (_iob_value(iob) - config.basal_iob) * config.cf


def openaps_like_step(bg: float, trend: float, config: ControllerConfig, iob: "float | IOBState") -> float:
    """Temp-basal style law driven by a 30-minute eventual-BG prediction (U/h)."""
    if bg <= 0:
        raise ValueError("BG must be > 0")
    eventual = eventual_bg(bg, trend, config, iob)
    if eventual < config.hypo_cutoff:
        return 0.0
    command = config.basal_rate + (eventual - config.target) / (config.cf * config.dia / 60.0)
    return _clamp(command, 0.0, config.max_rate)


class Controller:
    """Stateful wrapper: tracks the glucose trend from the BG values it is shown."""

    def __init__(self, name: str, config: ControllerConfig):
        if name not in CONTROLLER_NAMES:
            raise ValueError(f"unknown controller {name!r}; expected one of {CONTROLLER_NAMES}")
        self.name = name
        self.config = config
        self._last_bg: float | None = None

    def reset(self):
        self._last_bg = None

    def __call__(self, bg: float, iob: float) -> float:
        bg = max(bg, 1e-6)
        if self.name == "basal-bolus":
            command = basal_bolus_step(bg, self.config, iob)
        else:
            trend = 0.0 if self._last_bg is None else (bg - self._last_bg) / self.config.dt
            command = openaps_like_step(bg, trend, self.config, iob)
        self._last_bg = bg
        return command


def with_overrides(config: ControllerConfig, **kw) -> ControllerConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
