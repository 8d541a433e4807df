"""Campaign-level orchestration shared by the CLI and the end-to-end tests.

Monitor evaluation replays persisted traces offline, so every monitor sees
the same trajectories. Mitigation studies re-run the scenarios live, since
the corrected command changes the trajectory.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import faults, metrics, monitors, scs
from .glucose import PatientParams, population_params
from .learner import training
from .simulation import CampaignResult, ScenarioConfig, Trace, run_campaign

log = logging.getLogger(__name__)


def by_patient(traces: Sequence[Trace]) -> dict[str, list[Trace]]:
    out: dict[str, list[Trace]] = defaultdict(list)
    for t in traces:
        out[t.patient].append(t)
    return dict(sorted(out.items()))


def guideline_configs(traces: Sequence[Trace]) -> dict[str, monitors.GuidelineConfig]:
    """Per-patient percentile bounds from fault-free behavior.

    Fault-free traces are used when present; otherwise the pre-fault prefix
    of every trace stands in.
    """
    out = {}
    for patient, trs in by_patient(traces).items():
        clean = [t.true_bg for t in trs if t.fault_index is None]
        if not clean:
            clean = [t.true_bg[: t.fault_index] for t in trs if t.fault_index]
        if not clean:
            raise ValueError(f"patient {patient}: no fault-free samples for the guideline bounds")
        out[patient] = monitors.GuidelineConfig.from_traces(clean, dt=trs[0].dt)
    return out


# -- thresholds ------------------------------------------------------------------

@dataclass
class FoldPlan:
    """Cross-validated thresholds: each scenario maps to its held-out fold."""

    k: int
    seed: int
    folds: dict[str, list[training.Fold]]  # patient -> folds

    def assignment(self) -> dict[str, tuple[str, int]]:
        return {sid: (p, f.index) for p, fs in self.folds.items() for f in fs for sid in f.test_ids}

    def thresholds_for(self, scenario_id: str) -> scs.ThresholdSet:
        patient, idx = self.assignment()[scenario_id]
        return self.folds[patient][idx].thresholds

    def lookup(self) -> dict[str, scs.ThresholdSet]:
        return {sid: self.folds[p][i].thresholds for sid, (p, i) in self.assignment().items()}


def learn_folds(traces: Sequence[Trace], k: int = 4, seed: int = 0, config=training.OptimizerConfig()) -> FoldPlan:
    """Per-patient k-fold learning (thresholds are patient-specific)."""
    return FoldPlan(k, seed, {p: training.cross_validate(trs, k, seed, p, config) for p, trs in by_patient(traces).items()})


# -- monitor construction --------------------------------------------------------

@dataclass(frozen=True)
class MonitorFactory:
    """Picklable recipe for a per-scenario monitor."""

    name: str
    thresholds: Mapping[str, Mapping[str, float]] = field(default_factory=dict)  # scenario id or patient -> slots
    guideline: Mapping[str, monitors.GuidelineConfig] = field(default_factory=dict)
    mpc_model: PatientParams | None = None

    def __post_init__(self):
        if self.name not in monitors.MONITOR_NAMES:
            raise ValueError(f"unknown monitor {self.name!r}; choose from {', '.join(monitors.MONITOR_NAMES)}")

    def build(self, scenario_id: str, patient: str, basal_rate: float, target: float, dt: float):
        if self.name == "cawot":
            return monitors.cawot(basal_rate, target, dt=dt)
        if self.name == "cawt":
            slots = self.thresholds.get(scenario_id, self.thresholds.get(patient))
            if slots is None:
                raise monitors.UnresolvedThresholdError(f"no learned thresholds for {scenario_id} ({patient})")
            return monitors.cawt(slots, basal_rate, target, dt=dt)
        if self.name == "guideline":
            if patient not in self.guideline:
                raise ValueError(f"no guideline bounds for patient {patient}")
            return monitors.GuidelineMonitor(self.guideline[patient])
        if self.mpc_model is None:
            raise ValueError("MPC monitor needs a population model")
        return monitors.MPCMonitor(self.mpc_model, target, dt=dt)

    def for_trace(self, trace: Trace):
        h = trace.header
        return self.build(trace.scenario_id, trace.patient, h["basal_rate"], h.get("target", scs.DEFAULT_TARGET), trace.dt)

    def __call__(self, scenario: ScenarioConfig, params: PatientParams):
        from .simulation import controller_config

        cfg = controller_config(params, scenario)
        return self.build(scenario.scenario_id, scenario.patient, cfg.basal_rate, scenario.target, scenario.dt)


@dataclass(frozen=True)
class MitigatorFactory:
    """Fixed corrective dose = pump maximum of the scenario's controller."""

    def __call__(self, scenario: ScenarioConfig, params: PatientParams):
        from .simulation import controller_config

        cfg = controller_config(params, scenario)
        return monitors.Mitigator(monitors.MitigationConfig(cfg.max_rate, cfg.max_rate))


def make_factory(
    name: str,
    traces: Sequence[Trace] = (),
    profiles: Mapping[str, PatientParams] | None = None,
    thresholds: Mapping[str, scs.ThresholdSet] | None = None,
    guideline: Mapping[str, monitors.GuidelineConfig] | None = None,
) -> MonitorFactory:
    """Resolve everything a monitor needs up front so factories stay picklable."""
    slots = {k: dict(v.slots) for k, v in (thresholds or {}).items()}
    if name == "guideline" and guideline is None:
        guideline = guideline_configs(traces)
    model = population_params(list(profiles.values())) if name == "mpc" and profiles else None
    return MonitorFactory(name, slots, dict(guideline or {}), model)


# -- parallel campaigns ----------------------------------------------------------

def _run_chunk(args):
    scenarios, profiles, mon, mit = args
    return run_campaign(scenarios, profiles, mon, mit)


def run_parallel(
    scenarios: Sequence[ScenarioConfig],
    profiles: Mapping[str, PatientParams],
    monitor_factory=None,
    mitigator_factory=None,
    jobs: int = 1,
) -> CampaignResult:
    """Fan scenarios out over ``jobs`` processes; output order is the input order."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if jobs == 1 or len(scenarios) < 2 * jobs:
        return run_campaign(scenarios, dict(profiles), monitor_factory, mitigator_factory)
    size = -(-len(scenarios) // (4 * jobs))
    chunks = [(list(scenarios[i:i + size]), dict(profiles), monitor_factory, mitigator_factory)
              for i in range(0, len(scenarios), size)]
    out = CampaignResult([])
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(_run_chunk, chunks):
            out.traces.extend(part.traces)
            out.failures.extend(part.failures)
    return out


def scenarios_from_traces(traces: Sequence[Trace], monitor: str | None = None, mitigation: bool = False) -> list[ScenarioConfig]:
    """Rebuild the scenario of every persisted trace (for paired re-runs)."""
    out = []
    for t in traces:
        h = t.header
        fault = h.get("fault")
        out.append(ScenarioConfig(
            scenario_id=t.scenario_id,
            patient=t.patient,
            initial_bg=float(h["initial_bg"]),
            controller=h.get("controller", "openaps-like"),
            fault=None if fault is None else faults.FaultSpec.from_dict(fault),
            monitor=monitor,
            mitigation=mitigation,
            steps=int(h["steps"]),
            dt=float(h["dt"]),
            seed=int(h.get("seed", 0)),
            target=float(h.get("target", scs.DEFAULT_TARGET)),
        ))
    return out


# -- offline evaluation ----------------------------------------------------------

def replay_alarms(factory: MonitorFactory, trace: Trace) -> list[str]:
    mon = factory.for_trace(trace)
    return mon.evaluate(trace.true_bg, trace.iob, trace.raw_cmd)


def evaluate(
    traces: Sequence[Trace],
    factories: Mapping[str, MonitorFactory],
    delta: int = metrics.DEFAULT_DELTA,
) -> tuple[dict, list[dict]]:
    """Replay each monitor over every trace; returns (summary, per-trace rows).

    Every count in the summary is a column sum of the rows.
    """
    rows: list[dict] = []
    for name, factory in factories.items():
        for t in traces:
            alarm = np.array([bool(a) for a in replay_alarms(factory, t)])
            truth = np.array([bool(v) for v in t.label])
            hz = t.hazard
            s = metrics.sample_confusion(alarm, truth, delta)
            r = metrics.simulation_confusion(alarm, hz.hazardous, t.fault_index)
            rows.append({
                "monitor": name,
                "scenario_id": t.scenario_id,
                "patient": t.patient,
                "hazard": hz.hazard_type or "",
                "fault_index": t.fault_index,
                "onset_index": hz.onset_index,
                "first_alarm": int(np.argmax(alarm)) if alarm.any() else None,
                "reaction_min": metrics.reaction_time(alarm, hz.onset_index, t.fault_index, t.dt),
                "tp": s.tp, "fp": s.fp, "fn": s.fn, "tn": s.tn,
                "sim_tp": r.tp, "sim_fp": r.fp, "sim_fn": r.fn, "sim_tn": r.tn,
            })
    return summarize(rows, traces, delta), rows


def summarize(rows: Sequence[dict], traces: Sequence[Trace], delta: int) -> dict:
    summary: dict = {"delta": delta, "n_traces": len(traces), "monitors": {}}
    for name in dict.fromkeys(r["monitor"] for r in rows):
        mine = [r for r in rows if r["monitor"] == name]
        sample = metrics.ConfusionCounts(*(sum(r[k] for r in mine) for k in ("tp", "fp", "fn", "tn")))
        sim = metrics.ConfusionCounts(*(sum(r[k] for r in mine) for k in ("sim_tp", "sim_fp", "sim_fn", "sim_tn")))
        reactions = [r["reaction_min"] for r in mine if r["reaction_min"] is not None]
        summary["monitors"][name] = {
            "sample": sample.to_dict(),
            "simulation": sim.to_dict(),
            "reaction_min": {
                "n": len(reactions),
                "mean": float(np.mean(reactions)) if reactions else None,
                "early_rate": (sum(r > 0 for r in reactions) / len(reactions)) if reactions else None,
                **metrics.percentiles(reactions),
            },
        }
    tth = [v for v in (metrics.time_to_hazard(t) for t in traces) if v is not None]
    summary["tth_min"] = {"n": len(tth), "min": min(tth, default=None), "max": max(tth, default=None), **metrics.percentiles(tth)}
    summary["coverage"] = coverage_by_patient(traces)
    return summary


def coverage_by_patient(traces: Sequence[Trace]) -> dict:
    out = {}
    for patient, trs in by_patient(traces).items():
        faulted = [t for t in trs if t.fault_index is not None]
        out[patient] = metrics.hazard_coverage(trs) if faulted else None
    faulted = [t for t in traces if t.fault_index is not None]
    out["all"] = metrics.hazard_coverage(traces) if faulted else None
    return out


def reaction_times(summary_rows: Sequence[dict], monitor: str) -> list[float]:
    return [r["reaction_min"] for r in summary_rows if r["monitor"] == monitor and r["reaction_min"] is not None]


# -- mitigation study ------------------------------------------------------------

def mitigation_summary(baseline: Sequence[Trace], mitigated: Sequence[Trace], monitor: str) -> dict:
    """Recovery rate, new hazards and average risk of a paired campaign.

    The no-monitor reference charges every baseline hazard as a miss; with
    mitigation, missed hazards and newly induced ones are charged with the
    mean risk index of the mitigated run.
    """
    base = {t.scenario_id: t for t in baseline}
    mit = {t.scenario_id: t for t in mitigated}
    rec = metrics.recovery_rate({k: t.hazard.hazardous for k, t in base.items()},
                                {k: t.hazard.hazardous for k, t in mit.items()})
    n = len(base)
    fn = [metrics.trace_mean_risk(mit[k]) for k, t in base.items() if t.hazard.hazardous and mit[k].hazard.hazardous]
    new = [metrics.trace_mean_risk(mit[k]) for k, t in base.items() if not t.hazard.hazardous and mit[k].hazard.hazardous]
    no_monitor = [metrics.trace_mean_risk(t) for t in base.values() if t.hazard.hazardous]
    return {
        "monitor": monitor,
        "n": n,
        "recovery_rate": rec.rate,
        "prevented": rec.prevented,
        "baseline_hazards": rec.baseline_hazards,
        "new_hazards": rec.new_hazards,
        "avg_risk": metrics.average_risk(fn, new, n),
        "avg_risk_no_monitor": metrics.average_risk(no_monitor, [], n),
        "mitigated_samples": int(sum(int(t.mitig.sum()) for t in mitigated)),
    }


def mitigation_study(
    baseline: Sequence[Trace],
    profiles: Mapping[str, PatientParams],
    factory: MonitorFactory,
    jobs: int = 1,
) -> tuple[CampaignResult, dict]:
    scenarios = scenarios_from_traces(baseline, factory.name, mitigation=True)
    result = run_parallel(scenarios, profiles, factory, MitigatorFactory(), jobs)
    ok = {t.scenario_id for t in result.traces}
    paired = [t for t in baseline if t.scenario_id in ok]
    return result, mitigation_summary(paired, result.traces, factory.name)


# -- human-readable tables -------------------------------------------------------

def _fmt(v, pct=False) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{100 * v:.1f}%" if pct else f"{v:.3f}"
    return str(v)


def _ordered(by_monitor: Mapping[str, dict]):
    rank = {n: i for i, n in enumerate(monitors.MONITOR_NAMES)}
    return sorted(by_monitor.items(), key=lambda kv: rank.get(kv[0], len(rank)))


def detection_table(summary: dict, level: str = "sample") -> str:
    head = f"{'Monitor':<10} {'FPR':>8} {'FNR':>8} {'ACC':>8} {'F1':>8} {'TP':>8} {'FP':>8} {'FN':>8} {'TN':>8}"
    lines = [f"Detection ({level} level, delta = {summary['delta']})", head, "-" * len(head)]
    for name, m in _ordered(summary["monitors"]):
        c = m[level]
        lines.append(f"{name:<10} {_fmt(c['fpr']):>8} {_fmt(c['fnr']):>8} {_fmt(c['acc']):>8} {_fmt(c['f1']):>8} "
                     f"{c['tp']:>8} {c['fp']:>8} {c['fn']:>8} {c['tn']:>8}")
    return "\n".join(lines)


def mitigation_table(rows: Sequence[dict]) -> str:
    head = f"{'Monitor':<10} {'Recovery Rate':>14} {'No. New Hazard':>15} {'Avg. Risk':>10} {'No-monitor Risk':>16}"
    lines = ["Mitigation", head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['monitor']:<10} {_fmt(r['recovery_rate'], pct=True):>14} {r['new_hazards']:>15} "
                     f"{_fmt(r['avg_risk']):>10} {_fmt(r['avg_risk_no_monitor']):>16}")
    return "\n".join(lines)
