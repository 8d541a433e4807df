"""Virtual-patient glucose/insulin dynamics.

Four-state model: subcutaneous insulin, plasma insulin, insulin effect and
blood glucose::

    dI_SC/dt  = -I_SC/tau1 + ID/(tau1 * C_I)
    dI_P/dt   = (I_SC - I_P)/tau2
    dI_EFF/dt = -p2 * I_EFF + p2 * S_I * I_P
    dG/dt     = -(GEZI + I_EFF) * G + EGP + R_A(t)

Insulin delivery ``ID`` is in µU/min, concentrations in µU/ml. Clearance
``C_I`` is stored in dl/min (the unit used by published patient tables) and
converted to ml/min inside the insulin equation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

ML_PER_DL = 100.0
MICRO_UNITS_PER_UNIT = 1e6
DEFAULT_DT = 5.0
DEFAULT_SUBSTEPS = 5
DEFAULT_GLUCOSE_FLOOR = 10.0


class NonFiniteStateError(ArithmeticError):
    """Raised when integration produces NaN/inf."""


def units_per_hour_to_micro_units_per_min(rate: float) -> float:
    return rate * MICRO_UNITS_PER_UNIT / 60.0


def micro_units_per_min_to_units_per_hour(rate: float) -> float:
    return rate * 60.0 / MICRO_UNITS_PER_UNIT


@dataclass(frozen=True)
class PatientParams:
    name: str
    body_weight: float  # kg
    ci: float  # insulin clearance, dl/min
    tau1: float  # min
    tau2: float  # min
    p2: float  # 1/min
    si: float  # ml/µU/min
    gezi: float  # 1/min
    egp: float  # mg/dl/min
    vg: float  # dl

    def __post_init__(self):
        for key in ("body_weight", "ci", "tau1", "tau2", "p2", "si", "gezi", "egp", "vg"):
            value = getattr(self, key)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"patient {self.name!r}: {key} must be finite and > 0, got {value!r}")
        if self.tau1 < 1 or self.tau2 < 1:
            raise ValueError(f"patient {self.name!r}: tau1 and tau2 must be >= 1 min")
        if self.gezi >= 1:
            raise ValueError(f"patient {self.name!r}: gezi must be < 1")

    @property
    def clearance_ml(self) -> float:
        return self.ci * ML_PER_DL

    def to_dict(self) -> dict:
        return asdict(self)


class PatientState(NamedTuple):
    G: float  # mg/dl
    I_SC: float  # µU/ml
    I_P: float  # µU/ml
    I_EFF: float  # 1/min


class StateRate(NamedTuple):
    dG: float
    dI_SC: float
    dI_P: float
    dI_EFF: float


@dataclass(frozen=True)
class MealProfile:
    """Piecewise-constant glucose appearance: (start min, amplitude mg/dl/min, duration min)."""

    meals: tuple[tuple[float, float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for start, amplitude, duration in self.meals:
            if amplitude < 0 or duration <= 0:
                raise ValueError(f"invalid meal ({start}, {amplitude}, {duration})")

    def rate(self, t: float) -> float:
        total = 0.0
        for start, amplitude, duration in self.meals:
            if start <= t < start + duration:
                total += amplitude
        return total


NO_MEALS = MealProfile()


def derivatives(state: PatientState, params: PatientParams, insulin_delivery: float, ra: float = 0.0) -> StateRate:
    values = (*state, insulin_delivery, ra)
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteStateError(f"non-finite input to derivatives: state={state}, ID={insulin_delivery}, R_A={ra}")
    g, isc, ip, ieff = state
    return StateRate(
        dG=-(params.gezi + ieff) * g + params.egp + ra,
        dI_SC=-isc / params.tau1 + insulin_delivery / (params.tau1 * params.clearance_ml),
        dI_P=(isc - ip) / params.tau2,
        dI_EFF=-params.p2 * ieff + params.p2 * params.si * ip,
    )


def step(
    state: PatientState,
    params: PatientParams,
    insulin_delivery: float,
    meal: MealProfile = NO_MEALS,
    dt: float = DEFAULT_DT,
    t: float = 0.0,
    substeps: int = DEFAULT_SUBSTEPS,
    glucose_floor: float = DEFAULT_GLUCOSE_FLOOR,
) -> tuple[PatientState, bool]:
    """Advance one control step with classical RK4 using ``substeps`` internal steps.

    Returns the new state and whether glucose hit the floor clamp.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    # Inlined right-hand side: this is the simulator's hot loop.
    gezi, egp, p2 = params.gezi, params.egp, params.p2
    p2si = p2 * params.si
    inv_tau1, inv_tau2 = 1.0 / params.tau1, 1.0 / params.tau2
    inflow = insulin_delivery / (params.tau1 * params.clearance_ml)
    h = dt / substeps
    g, isc, ip, ieff = state
    has_meals = bool(meal.meals)
    for i in range(substeps):
        t0 = t + i * h
        if has_meals:
            ra0, ra1, ra2 = meal.rate(t0), meal.rate(t0 + 0.5 * h), meal.rate(t0 + h)
        else:
            ra0 = ra1 = ra2 = 0.0
        k1g = -(gezi + ieff) * g + egp + ra0
        k1s = inflow - isc * inv_tau1
        k1p = (isc - ip) * inv_tau2
        k1e = p2si * ip - p2 * ieff

        g2, s2, p2_, e2 = g + 0.5 * h * k1g, isc + 0.5 * h * k1s, ip + 0.5 * h * k1p, ieff + 0.5 * h * k1e
        k2g = -(gezi + e2) * g2 + egp + ra1
        k2s = inflow - s2 * inv_tau1
        k2p = (s2 - p2_) * inv_tau2
        k2e = p2si * p2_ - p2 * e2

        g3, s3, p3, e3 = g + 0.5 * h * k2g, isc + 0.5 * h * k2s, ip + 0.5 * h * k2p, ieff + 0.5 * h * k2e
        k3g = -(gezi + e3) * g3 + egp + ra1
        k3s = inflow - s3 * inv_tau1
        k3p = (s3 - p3) * inv_tau2
        k3e = p2si * p3 - p2 * e3

        g4, s4, p4, e4 = g + h * k3g, isc + h * k3s, ip + h * k3p, ieff + h * k3e
        k4g = -(gezi + e4) * g4 + egp + ra2
        k4s = inflow - s4 * inv_tau1
        k4p = (s4 - p4) * inv_tau2
        k4e = p2si * p4 - p2 * e4

        g += h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        isc += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        ip += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        ieff += h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)

    if not (math.isfinite(g) and math.isfinite(isc) and math.isfinite(ip) and math.isfinite(ieff)):
        raise NonFiniteStateError(f"non-finite state after step: G={g}, I_SC={isc}, I_P={ip}, I_EFF={ieff}")
    clamped = g < glucose_floor
    if clamped:
        g = glucose_floor
    # Linear insulin compartments stay non-negative for ID >= 0; guard round-off only.
    return PatientState(g, max(isc, 0.0), max(ip, 0.0), max(ieff, 0.0)), clamped


def steady_basal(params: PatientParams, target: float) -> float:
    """Insulin delivery (µU/min) that holds glucose at ``target`` in steady state."""
    ratio = params.egp / target
    if not ratio > params.gezi:
        raise ValueError(
            f"infeasible target {target} mg/dl for patient {params.name!r}: "
            f"requires EGP/G_T > GEZI ({ratio:.6g} <= {params.gezi:.6g})"
        )
    return params.clearance_ml * (ratio - params.gezi) / params.si


def steady_state(params: PatientParams, glucose: float, insulin_delivery: float) -> PatientState:
    """Insulin compartments at equilibrium for constant delivery, glucose set to ``glucose``."""
    plasma = insulin_delivery / params.clearance_ml
    return PatientState(glucose, plasma, plasma, params.si * plasma)


def simulate_constant(
    params: PatientParams,
    state: PatientState,
    insulin_delivery: float,
    steps: int,
    dt: float = DEFAULT_DT,
    substeps: int = DEFAULT_SUBSTEPS,
) -> list[PatientState]:
    """Open-loop trajectory under constant delivery (includes the initial state)."""
    out = [state]
    for k in range(steps):
        state, _ = step(state, params, insulin_delivery, dt=dt, t=k * dt, substeps=substeps)
        out.append(state)
    return out


def load_profiles(path: str | Path | None = None) -> dict[str, PatientParams]:
    """Load a JSON array of patient parameter records; defaults to the shipped cohort."""
    if path is None:
        text = resources.files("apsmon.data").joinpath("patients.json").read_text()
    else:
        text = Path(path).read_text()
    records = json.loads(text)
    profiles = {}
    for rec in records:
        p = PatientParams(**rec)
        if p.name in profiles:
            raise ValueError(f"duplicate patient name {p.name!r}")
        profiles[p.name] = p
    return profiles


def population_params(profiles: Sequence[PatientParams], name: str = "population") -> PatientParams:
    """Arithmetic mean of a cohort's parameters."""
    keys = ("body_weight", "ci", "tau1", "tau2", "p2", "si", "gezi", "egp", "vg")
    n = len(profiles)
    return PatientParams(name=name, **{k: sum(getattr(p, k) for p in profiles) / n for k in keys})
