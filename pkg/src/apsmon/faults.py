"""Software fault/attack injection on controller inputs, internal state and outputs."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

GLUCOSE_INPUT = "controller_glucose_input"
IOB = "controller_iob"
COMMAND = "command_output"
TARGETS = (GLUCOSE_INPUT, IOB, COMMAND)

KINDS = ("truncate_zero", "hold_last", "set_max", "set_min", "add", "sub", "scale_pow2")
VALUE_KINDS = ("add", "sub", "scale_pow2")
SCALE_EXPONENTS = (-2, -1, 1, 2)

# Fixed signal ranges; the command upper bound is the pump maximum (set per scenario).
GLUCOSE_BOUNDS = (10.0, 600.0)
IOB_BOUNDS = (0.0, 30.0)

# add/sub magnitude = BASE_UNIT[target] * 2**level
BASE_UNIT = {GLUCOSE_INPUT: 5.0, IOB: 0.25, COMMAND: 0.125}

DEFAULT_STARTS = (60.0, 120.0, 180.0)
DEFAULT_DURATIONS = (60.0, 150.0, 300.0)
DEFAULT_TIMINGS = tuple(itertools.product(DEFAULT_STARTS, DEFAULT_DURATIONS))
DEFAULT_INITIAL_BGS = tuple(float(v) for v in np.linspace(80, 200, 7))


@dataclass(frozen=True)
class FaultSpec:
    target: str
    kind: str
    trigger_time: float
    duration: float
    value: float = 0.0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown fault target {self.target!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.trigger_time < 0:
            raise ValueError("trigger_time must be >= 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.kind == "scale_pow2" and self.value not in SCALE_EXPONENTS:
            raise ValueError(f"scale_pow2 exponent must be one of {SCALE_EXPONENTS}, got {self.value}")
        if self.kind in ("add", "sub") and not (math.isfinite(self.value) and self.value >= 0):
            raise ValueError("add/sub magnitude must be finite and >= 0")

    def active(self, t: float) -> bool:
        return self.trigger_time <= t < self.trigger_time + self.duration

    @property
    def label(self) -> str:
        if self.kind in VALUE_KINDS:
            return f"{self.kind}({self.value:g})@{self.target}"
        return f"{self.kind}@{self.target}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FaultSpec":
        return cls(**data)


def signal_bounds(target: str, max_rate: float) -> tuple[float, float]:
    if target == GLUCOSE_INPUT:
        return GLUCOSE_BOUNDS
    if target == IOB:
        return IOB_BOUNDS
    if target == COMMAND:
        return (0.0, max_rate)
    raise ValueError(f"unknown signal {target!r}")


def apply(
    fault: FaultSpec | None,
    signal_name: str,
    clean_value: float,
    last_value: float,
    t: float,
    bounds: tuple[float, float],
) -> float:
    """Perturbed value of ``signal_name`` at time ``t``; identity when the fault is absent, inactive or elsewhere."""
    if not math.isfinite(clean_value):
        raise ValueError(f"non-finite {signal_name} value {clean_value}")
    if fault is None or fault.target != signal_name or not fault.active(t):
        return clean_value
    lo, hi = bounds
    kind = fault.kind
    if kind == "truncate_zero":
        return 0.0
    if kind == "hold_last":
        return last_value
    if kind == "set_max":
        return hi
    if kind == "set_min":
        return lo
    if kind == "add":
        value = clean_value + fault.value
    elif kind == "sub":
        value = clean_value - fault.value
    else:
        value = clean_value * 2.0 ** fault.value
    return min(max(value, lo), hi)


def fault_value(kind: str, target: str, level: int) -> float:
    """Map a grid level to the kind's parameter; parameterless kinds ignore it."""
    if kind in ("add", "sub"):
        return BASE_UNIT[target] * 2.0 ** level
    if kind == "scale_pow2":
        return float(SCALE_EXPONENTS[level % len(SCALE_EXPONENTS)])
    return 0.0


@dataclass(frozen=True)
class CampaignSpec:
    """Fault campaign: every (patient, initial BG) gets the same fault grid.

    The grid is the product ``targets x kinds x levels x timings``; ``sample``
    optionally draws that many grid entries per (patient, initial BG) without
    replacement, seeded by ``seed``.
    """

    patients: tuple[str, ...]
    initial_bgs: tuple[float, ...] = DEFAULT_INITIAL_BGS
    targets: tuple[str, ...] = (GLUCOSE_INPUT, COMMAND)
    kinds: tuple[str, ...] = KINDS
    levels: tuple[int, ...] = tuple(range(7))
    timings: tuple[tuple[float, float], ...] = DEFAULT_TIMINGS
    seed: int = 0
    sample: int | None = None
    include_fault_free: bool = True
    controller: str = "openaps-like"
    steps: int = 150
    dt: float = 5.0

    def __post_init__(self):
        for bg in self.initial_bgs:
            if not 80 <= bg <= 200:
                raise ValueError(f"initial BG {bg} outside [80, 200]")
        for target in self.targets:
            if target not in TARGETS:
                raise ValueError(f"unknown fault target {target!r}")
        for kind in self.kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown fault kind {kind!r}")

    @property
    def grid_size(self) -> int:
        return len(self.targets) * len(self.kinds) * len(self.levels) * len(self.timings)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timings"] = [list(t) for t in self.timings]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignSpec":
        data = dict(data)
        for key in ("patients", "initial_bgs", "targets", "kinds", "levels"):
            if key in data:
                data[key] = tuple(data[key])
        if "timings" in data:
            data["timings"] = tuple(tuple(float(x) for x in t) for t in data["timings"])
        return cls(**data)


def fault_grid(spec: CampaignSpec) -> list[FaultSpec]:
    grid = []
    for target, kind, level, (start, duration) in itertools.product(spec.targets, spec.kinds, spec.levels, spec.timings):
        grid.append(FaultSpec(target, kind, float(start), float(duration), fault_value(kind, target, level)))
    return grid


@dataclass(frozen=True)
class CampaignEntry:
    scenario_id: str
    patient: str
    initial_bg: float
    fault: FaultSpec | None = field(default=None)


def generate_campaign(spec: CampaignSpec) -> dict[tuple[str, float], list[CampaignEntry]]:
    """Expand the campaign deterministically; keys are (patient, initial BG)."""
    grid = fault_grid(spec)
    if not grid:
        raise ValueError("empty fault grid")
    if not spec.patients or not spec.initial_bgs:
        raise ValueError("campaign needs at least one patient and one initial BG")
    rng = np.random.default_rng(spec.seed)
    out: dict[tuple[str, float], list[CampaignEntry]] = {}
    for patient in spec.patients:
        for bg in spec.initial_bgs:
            if spec.sample is not None and spec.sample < len(grid):
                indices = sorted(int(i) for i in rng.choice(len(grid), size=spec.sample, replace=False))
            else:
                indices = list(range(len(grid)))
            entries = []
            if spec.include_fault_free:
                entries.append(CampaignEntry(f"{patient}_bg{bg:03.0f}_clean", patient, bg, None))
            for i in indices:
                entries.append(CampaignEntry(f"{patient}_bg{bg:03.0f}_f{i:04d}", patient, bg, grid[i]))
            out[(patient, bg)] = entries
    return out
