"""Closed-loop scenario execution and trace persistence."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import faults, risk
from .controllers import Controller, ControllerConfig, IOBState
from .glucose import (
    NonFiniteStateError,
    PatientParams,
    step,
    steady_basal,
    steady_state,
    units_per_hour_to_micro_units_per_min,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t_min", "true_bg", "seen_bg", "iob", "raw_cmd", "delivered_cmd", "fault", "alarm", "mitig", "label")
DEFAULT_STEPS = 150


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    patient: str
    initial_bg: float
    controller: str = "openaps-like"
    fault: faults.FaultSpec | None = None
    monitor: str | None = None
    mitigation: bool = False
    steps: int = DEFAULT_STEPS
    dt: float = 5.0
    seed: int = 0
    target: float = 120.0

    def __post_init__(self):
        if not 80 <= self.initial_bg <= 200:
            raise ValueError(f"initial BG {self.initial_bg} outside [80, 200]")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.mitigation and self.monitor is None:
            raise ValueError("mitigation needs a monitor")

    @property
    def fault_time(self) -> float | None:
        return None if self.fault is None else self.fault.trigger_time


@dataclass
class Trace:
    header: dict
    t_min: np.ndarray
    true_bg: np.ndarray
    seen_bg: np.ndarray
    iob: np.ndarray
    raw_cmd: np.ndarray
    delivered_cmd: np.ndarray
    fault: np.ndarray
    alarm: list[str]
    mitig: np.ndarray
    label: list[str]
    valid: bool = True

    def __len__(self) -> int:
        return len(self.t_min)

    @property
    def scenario_id(self) -> str:
        return self.header["scenario_id"]

    @property
    def patient(self) -> str:
        return self.header["patient"]

    @property
    def dt(self) -> float:
        return float(self.header["dt"])

    @property
    def fault_spec(self) -> faults.FaultSpec | None:
        f = self.header.get("fault")
        return None if f is None else faults.FaultSpec.from_dict(f)

    @property
    def fault_index(self) -> int | None:
        """First sample with the fault active (None for fault-free traces)."""
        idx = np.flatnonzero(self.fault)
        return int(idx[0]) if idx.size else None

    @property
    def hazard(self) -> risk.HazardLabel:
        labels = tuple(self.label)
        onset = next((i for i, v in enumerate(labels) if v), None)
        return risk.HazardLabel(labels, onset, self.dt)

    @property
    def alarm_mask(self) -> np.ndarray:
        return np.array([bool(a) for a in self.alarm], dtype=bool)

    def relabel(self, window: int = risk.DEFAULT_WINDOW) -> "Trace":
        self.label = list(risk.label(self.true_bg, window, dt=self.dt).labels)
        return self

    # -- persistence ------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            w.writerow([
                repr(float(self.t_min[i])),
                repr(float(self.true_bg[i])),
                repr(float(self.seen_bg[i])),
                repr(float(self.iob[i])),
                repr(float(self.raw_cmd[i])),
                repr(float(self.delivered_cmd[i])),
                int(self.fault[i]),
                self.alarm[i],
                int(self.mitig[i]),
                self.label[i],
            ])
        return buf.getvalue()

    def header_json(self) -> str:
        return json.dumps({**self.header, "valid": self.valid}, indent=2, sort_keys=True) + "\n"

    def save(self, directory: str | Path) -> Path:
        """Write ``<dir>/<patient>/<scenario-id>.csv`` plus the JSON sidecar."""
        base = Path(directory) / self.patient
        base.mkdir(parents=True, exist_ok=True)
        path = base / f"{self.scenario_id}.csv"
        path.write_text(self.to_csv())
        path.with_suffix(".json").write_text(self.header_json())
        return path

    @classmethod
    def load(cls, csv_path: str | Path) -> "Trace":
        csv_path = Path(csv_path)
        header = json.loads(csv_path.with_suffix(".json").read_text())
        valid = bool(header.pop("valid", True))
        with csv_path.open(newline="") as fh:
            reader = csv.reader(fh)
            cols = next(reader)
            if tuple(cols) != CSV_COLUMNS:
                raise ValueError(f"{csv_path}: unexpected columns {cols}")
            rows = list(reader)
        num = lambda j: np.array([float(r[j]) for r in rows])  # noqa: E731
        return cls(
            header=header,
            t_min=num(0),
            true_bg=num(1),
            seen_bg=num(2),
            iob=num(3),
            raw_cmd=num(4),
            delivered_cmd=num(5),
            fault=np.array([r[6] == "1" for r in rows]),
            alarm=[r[7] for r in rows],
            mitig=np.array([r[8] == "1" for r in rows]),
            label=[r[9] for r in rows],
            valid=valid,
        )


def load_campaign(directory: str | Path) -> list[Trace]:
    """All traces under a campaign directory, in sorted path order."""
    return [Trace.load(p) for p in sorted(Path(directory).glob("*/*.csv"))]


def controller_config(params: PatientParams, scenario: ScenarioConfig) -> ControllerConfig:
    return ControllerConfig.for_patient(params, target=scenario.target, dt=scenario.dt)


def run(
    scenario: ScenarioConfig,
    params: PatientParams,
    monitor=None,
    mitigator=None,
    config: ControllerConfig | None = None,
) -> Trace:
    """Simulate one scenario.

    Per step: the patient emits true BG, the fault engine perturbs the
    controller's glucose input, the controller computes a command from the
    (possibly faulted) IOB, the fault engine perturbs the command, the
    monitor observes true BG, net IOB and the post-fault command, mitigation
    may override the command, and the patient integrates one step.

    The trace's IOB column is net of the scheduled basal (it is negative
    while delivery runs below basal), as APS controllers report it.
    """
    if scenario.mitigation and mitigator is None:
        raise ValueError("mitigation enabled without a mitigator")
    config = config or controller_config(params, scenario)
    ctl = Controller(scenario.controller, config)
    if monitor is not None:
        monitor.reset()
    if mitigator is not None:
        mitigator.reset()
    fault = scenario.fault
    n, dt = scenario.steps, scenario.dt
    g_bounds = faults.signal_bounds(faults.GLUCOSE_INPUT, config.max_rate)
    i_bounds = faults.signal_bounds(faults.IOB, config.max_rate)
    c_bounds = faults.signal_bounds(faults.COMMAND, config.max_rate)

    basal_flow = steady_basal(params, scenario.target)
    state = steady_state(params, scenario.initial_bg, basal_flow)
    iob_state = IOBState(iob=config.basal_iob)

    cols = {k: np.zeros(n) for k in ("t_min", "true_bg", "seen_bg", "iob", "raw_cmd", "delivered_cmd")}
    fault_on = np.zeros(n, dtype=bool)
    mitig = np.zeros(n, dtype=bool)
    alarm = [""] * n
    last_bg = last_iob = last_cmd = None
    valid = True
    k_done = n
    for k in range(n):
        t = k * dt
        true_bg = state.G
        seen_bg = faults.apply(fault, faults.GLUCOSE_INPUT, true_bg, true_bg if last_bg is None else last_bg, t, g_bounds)
        seen_iob = faults.apply(fault, faults.IOB, iob_state.iob, iob_state.iob if last_iob is None else last_iob, t, i_bounds)
        clean_cmd = ctl(seen_bg, seen_iob)
        cmd = faults.apply(fault, faults.COMMAND, clean_cmd, clean_cmd if last_cmd is None else last_cmd, t, c_bounds)
        last_bg, last_iob, last_cmd = seen_bg, seen_iob, cmd

        net_iob = iob_state.iob - config.basal_iob
        delivered = cmd
        if monitor is not None:
            verdict = monitor.observe(true_bg, net_iob, cmd)
            alarm[k] = verdict.code
            if mitigator is not None and scenario.mitigation:
                delivered, mitig[k] = mitigator.apply(verdict, true_bg, cmd)

        cols["t_min"][k] = t
        cols["true_bg"][k] = true_bg
        cols["seen_bg"][k] = seen_bg
        cols["iob"][k] = net_iob
        cols["raw_cmd"][k] = cmd
        cols["delivered_cmd"][k] = delivered
        fault_on[k] = fault is not None and fault.active(t)

        iob_state = IOBState(iob=iob_state.iob * config.decay_per_step + delivered * dt / 60.0, time=t + dt)
        try:
            state, _ = step(state, params, units_per_hour_to_micro_units_per_min(delivered), dt=dt, t=t)
        except NonFiniteStateError as exc:
            log.warning("scenario %s aborted at t=%s: %s", scenario.scenario_id, t, exc)
            valid = False
            k_done = k + 1
            break

    header = {
        "scenario_id": scenario.scenario_id,
        "patient": scenario.patient,
        "initial_bg": scenario.initial_bg,
        "fault": None if fault is None else fault.to_dict(),
        "controller": scenario.controller,
        "monitor": scenario.monitor,
        "mitigation": scenario.mitigation,
        "seed": scenario.seed,
        "dt": dt,
        "steps": n,
        "target": scenario.target,
        "basal_rate": config.basal_rate,
        "max_rate": config.max_rate,
    }
    sl = slice(0, k_done)
    trace = Trace(
        header=header,
        **{k: v[sl] for k, v in cols.items()},
        fault=fault_on[sl],
        alarm=alarm[:k_done],
        mitig=mitig[sl],
        label=[""] * k_done,
        valid=valid,
    )
    return trace.relabel()


@dataclass
class CampaignResult:
    traces: list[Trace]
    failures: list[tuple[str, str]] = field(default_factory=list)


def scenarios_from_campaign(spec: faults.CampaignSpec, monitor: str | None = None, mitigation: bool = False) -> list[ScenarioConfig]:
    out = []
    for entries in faults.generate_campaign(spec).values():
        for e in entries:
            out.append(ScenarioConfig(
                scenario_id=e.scenario_id,
                patient=e.patient,
                initial_bg=e.initial_bg,
                controller=spec.controller,
                fault=e.fault,
                monitor=monitor,
                mitigation=mitigation,
                steps=spec.steps,
                dt=spec.dt,
                seed=spec.seed,
            ))
    return out


def run_campaign(
    scenarios: Sequence[ScenarioConfig],
    profiles: dict[str, PatientParams],
    monitor_factory: Callable[[ScenarioConfig, PatientParams], object] | None = None,
    mitigator_factory: Callable[[ScenarioConfig, PatientParams], object] | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> CampaignResult:
    """Run scenarios sequentially; a failing scenario is recorded, not raised."""
    if not scenarios:
        raise ValueError("empty campaign")
    result = CampaignResult([])
    for i, sc in enumerate(scenarios):
        try:
            params = profiles[sc.patient]
            mon = monitor_factory(sc, params) if monitor_factory else None
            mit = mitigator_factory(sc, params) if mitigator_factory and sc.mitigation else None
            trace = run(sc, params, mon, mit)
            if not trace.valid:
                result.failures.append((sc.scenario_id, "integration failure"))
            result.traces.append(trace)
        except (KeyError, ValueError, ArithmeticError) as exc:
            result.failures.append((sc.scenario_id, f"{type(exc).__name__}: {exc}"))
        if progress:
            progress(i + 1, len(scenarios))
    return result


def save_campaign(traces: Iterable[Trace], directory: str | Path) -> list[Path]:
    return [t.save(directory) for t in traces]
