"""Command-line entry point.

Exit codes: 0 success, 1 some scenarios failed, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, faults, metrics, monitors, pipeline, risk, scs
from .glucose import load_profiles
from .learner import training
from .simulation import ScenarioConfig, Trace, load_campaign, save_campaign, scenarios_from_campaign

log = logging.getLogger("apsmon")

MANIFEST = "manifest.json"


class ConfigError(Exception):
    pass


def _hash_files(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(p.as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def hash_dir(directory: str | Path) -> str:
    """Content hash of every file below ``directory`` except manifests."""
    root = Path(directory)
    files = [p for p in root.rglob("*") if p.is_file() and p.name != MANIFEST]
    h = hashlib.sha256()
    for p in sorted(files):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    output: str
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)  # path -> content hash
    output_hash: str = ""
    stages: list[dict] = field(default_factory=list)  # earlier stages that wrote here, oldest first

    def write(self, directory: Path):
        """Write the manifest, keeping the stage history of an in-place rerun."""
        path = directory / MANIFEST
        self.output_hash = hash_dir(directory)
        if path.exists():
            prior = json.loads(path.read_text())
            self.stages = prior.get("stages", [])
            if (prior["command"], prior["output_hash"]) != (self.command, self.output_hash):
                self.stages = self.stages + [{k: prior[k] for k in ("command", "output_hash")}]
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _input_hash(path: Path) -> str:
    return hash_dir(path) if path.is_dir() else _hash_files([path])


def _manifest(args, command: str, inputs: list[Path], config: dict, seed=None) -> RunManifest:
    return RunManifest(command, config, seed, str(args.out), inputs={str(p): _input_hash(p) for p in inputs})


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_traces(path: Path) -> list[Trace]:
    traces = load_campaign(_require(path, "campaign directory"))
    if not traces:
        raise ConfigError(f"no traces under {path}")
    return traces


def _profiles(path):
    try:
        return load_profiles(path)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot load patient profiles: {exc}") from exc


def _thresholds(path: str | None, ids=()) -> dict[str, scs.ThresholdSet]:
    """Threshold sets keyed by scenario id (fold output) or patient.

    A single JSON file applies to every scenario; a ``learn`` output directory
    maps each scenario to its held-out fold and each patient to ``all.json``.
    """
    if path is None:
        return {}
    p = _require(path, "thresholds")
    try:
        if p.is_file():
            ts = scs.ThresholdSet.load(p)
            return {sid: ts for sid in ids}
        out = {}
        for d in sorted(x for x in p.iterdir() if x.is_dir()):
            if (d / "all.json").exists():
                out[d.name] = scs.ThresholdSet.load(d / "all.json")
        folds = p / "folds.json"
        if folds.exists():
            for sid, (patient, idx) in json.loads(folds.read_text()).items():
                out[sid] = scs.ThresholdSet.load(p / patient / f"fold{idx}.json")
        return out
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad thresholds at {p}: {exc}") from exc


def _factory(name, traces, profiles, thresholds, guideline=None) -> pipeline.MonitorFactory:
    if name not in monitors.MONITOR_NAMES:
        raise ConfigError(f"unknown monitor {name!r}; choose from {', '.join(monitors.MONITOR_NAMES)}")
    if name == "cawt" and not thresholds:
        raise ConfigError("the cawt monitor needs --thresholds")
    return pipeline.make_factory(name, traces, profiles, thresholds, guideline)


def _campaign_spec(path: Path, seed, profiles) -> faults.CampaignSpec:
    try:
        data = json.loads(path.read_text())
        data.setdefault("patients", sorted(profiles))
        if seed is not None:
            data["seed"] = seed
        spec = faults.CampaignSpec.from_dict(data)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad campaign {path}: {exc}") from exc
    unknown = sorted(set(spec.patients) - set(profiles))
    if unknown:
        raise ConfigError(f"unknown patients {unknown}")
    return spec


def _guideline_for_live(spec: faults.CampaignSpec, profiles) -> dict:
    """Percentile bounds from fault-free runs of the campaign's patients."""
    clean = [ScenarioConfig(f"{p}_bg{bg:03.0f}_clean", p, bg, spec.controller, steps=spec.steps, dt=spec.dt, seed=spec.seed)
             for p in spec.patients for bg in spec.initial_bgs]
    return pipeline.guideline_configs(pipeline.run_parallel(clean, profiles).traces)


# -- subcommands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    profiles = _profiles(args.profiles)
    spec = _campaign_spec(_require(args.campaign, "campaign"), args.seed, profiles)
    if args.mitigate and not args.monitor:
        raise ConfigError("--mitigate needs --monitor")
    scenarios = scenarios_from_campaign(spec, args.monitor, args.mitigate)
    factory = None
    if args.monitor:
        ids = [s.scenario_id for s in scenarios]
        guide = _guideline_for_live(spec, profiles) if args.monitor == "guideline" else None
        factory = _factory(args.monitor, [], profiles, _thresholds(args.thresholds, ids), guide)
    mit = pipeline.MitigatorFactory() if args.mitigate else None
    log.info("simulating %d scenarios", len(scenarios))
    result = pipeline.run_parallel(scenarios, profiles, factory, mit, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_campaign(result.traces, out)
    inputs = [Path(args.campaign)] + ([Path(args.thresholds)] if args.thresholds else [])
    man = _manifest(args, "simulate", inputs, {"campaign": spec.to_dict(), "monitor": args.monitor,
                                              "mitigate": args.mitigate, "profiles": args.profiles}, spec.seed)
    man.write(out)
    print(f"{len(result.traces)} traces written to {out}")
    return _report_failures(result.failures)


def _report_failures(failures) -> int:
    if not failures:
        return 0
    for sid, why in failures[:20]:
        print(f"failed: {sid}: {why}", file=sys.stderr)
    print(f"{len(failures)} scenario(s) failed", file=sys.stderr)
    return 1


def cmd_label(args) -> int:
    src = Path(args.campaign)
    traces = _load_traces(src)
    for t in traces:
        t.relabel(args.window)
    out = Path(args.out) if args.out else src
    args.out = out
    out.mkdir(parents=True, exist_ok=True)
    save_campaign(traces, out)
    man = _manifest(args, "label", [] if out == src else [src], {"window": args.window, "source": str(src)})
    man.write(out)
    n = sum(t.hazard.hazardous for t in traces)
    print(f"labeled {len(traces)} traces ({n} hazardous)")
    return 0


def cmd_learn(args) -> int:
    src = Path(args.campaign)
    traces = _load_traces(src)
    if not any(t.hazard.hazardous for t in traces):
        log.warning("campaign has no hazardous traces; thresholds fall back to the CAWOT defaults")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        plan = pipeline.learn_folds(traces, args.folds, args.seed)
    except training.InsufficientDataError as exc:
        raise ConfigError(str(exc)) from exc
    for patient, folds in plan.folds.items():
        d = out / patient
        d.mkdir(exist_ok=True)
        for f in folds:
            f.thresholds.save(d / f"fold{f.index}.json")
            (d / f"fold{f.index}_log.csv").write_text(_logs_csv(f.logs))
        group = [t for t in traces if t.patient == patient]
        full = training.learn_thresholds(group, provenance={"patient": patient, "fold": None})
        full.thresholds.save(d / "all.json")
        (d / "all_log.csv").write_text(_logs_csv(full.logs))
    assign = {sid: list(v) for sid, v in sorted(plan.assignment().items())}
    (out / "folds.json").write_text(json.dumps(assign, indent=1, sort_keys=True) + "\n")
    _manifest(args, "learn", [src], {"folds": args.folds}, args.seed).write(out)
    print(f"thresholds for {len(plan.folds)} patient(s) x {args.folds} folds written to {out}")
    return 0


def _logs_csv(logs: dict[str, str]) -> str:
    lines = ["slot,iteration,objective,pg_norm"]
    for slot in sorted(logs, key=lambda s: int(s[1:])):
        lines += [f"{slot},{row}" for row in logs[slot].splitlines()[1:]]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    src = Path(args.campaign)
    traces = _load_traces(src)
    profiles = _profiles(args.profiles)
    names = [n.strip() for n in args.monitors.split(",") if n.strip()]
    thr = _thresholds(args.thresholds, [t.scenario_id for t in traces])
    if args.delta < 0:
        raise ConfigError("--delta must be >= 0")
    factories = {n: _factory(n, traces, profiles, thr) for n in names}
    try:
        summary, rows = pipeline.evaluate(traces, factories, args.delta)
    except (monitors.UnresolvedThresholdError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(metrics.to_json(summary))
    (out / "per_trace.csv").write_text(metrics.rows_to_csv(rows))
    tth = [v for v in (metrics.time_to_hazard(t) for t in traces) if v is not None]
    (out / "tth_hist.dat").write_text(metrics.histogram(tth))
    for n in names:
        (out / f"reaction_{n}_hist.dat").write_text(metrics.histogram(pipeline.reaction_times(rows, n)))
    inputs = [src] + ([Path(args.thresholds)] if args.thresholds else [])
    _manifest(args, "eval", inputs, {"monitors": names, "delta": args.delta, "profiles": args.profiles}).write(out)
    print(pipeline.detection_table(summary, "sample"))
    print()
    print(pipeline.detection_table(summary, "simulation"))
    return 0


def cmd_mitigate_eval(args) -> int:
    base_dir = Path(args.baseline)
    baseline = _load_traces(base_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [base_dir]
    failures = []
    if args.mitigated:
        mitigated = _load_traces(Path(args.mitigated))
        inputs.append(Path(args.mitigated))
        name = mitigated[0].header.get("monitor") or args.monitor
        ids = {t.scenario_id for t in mitigated}
        baseline = [t for t in baseline if t.scenario_id in ids]
    else:
        profiles = _profiles(args.profiles)
        thr = _thresholds(args.thresholds, [t.scenario_id for t in baseline])
        factory = _factory(args.monitor, baseline, profiles, thr)
        name = args.monitor
        scenarios = pipeline.scenarios_from_traces(baseline, name, mitigation=True)
        result = pipeline.run_parallel(scenarios, profiles, factory, pipeline.MitigatorFactory(), args.jobs)
        mitigated, failures = result.traces, result.failures
        ok = {t.scenario_id for t in mitigated}
        baseline = [t for t in baseline if t.scenario_id in ok]
        save_campaign(mitigated, out / "traces")
        if args.thresholds:
            inputs.append(Path(args.thresholds))
    try:
        summary = pipeline.mitigation_summary(baseline, mitigated, name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    (out / "recovery.json").write_text(metrics.to_json(summary))
    _manifest(args, "mitigate-eval", inputs, {"monitor": name, "profiles": args.profiles}).write(out)
    print(pipeline.mitigation_table([summary]))
    return _report_failures(failures)


def cmd_report(args) -> int:
    parts = []
    for d in args.eval or []:
        summary = json.loads(_require(Path(d) / "metrics.json", "metrics").read_text())
        parts.append(pipeline.detection_table(summary, "sample"))
        parts.append(pipeline.detection_table(summary, "simulation"))
        rt = summary["monitors"]
        lines = ["Reaction time (min)", f"{'Monitor':<10} {'n':>6} {'mean':>8} {'p50':>8} {'early':>8}"]
        for name, m in pipeline._ordered(rt):
            r = m["reaction_min"]
            lines.append(f"{name:<10} {r['n']:>6} {pipeline._fmt(r['mean']):>8} {pipeline._fmt(r['p50']):>8} "
                         f"{pipeline._fmt(r['early_rate'], pct=True):>8}")
        parts.append("\n".join(lines))
        tth, cov = summary["tth_min"], summary["coverage"]
        parts.append(f"TTH (min): n={tth['n']} min={tth['min']} p50={tth['p50']} max={tth['max']}\n"
                     + "Hazard coverage: " + ", ".join(f"{k}={pipeline._fmt(v, pct=True)}" for k, v in cov.items()))
    rows = [json.loads(_require(Path(d) / "recovery.json", "recovery report").read_text()) for d in args.mitigation or []]
    if rows:
        parts.append(pipeline.mitigation_table(rows))
    if not parts:
        raise ConfigError("nothing to report; pass --eval and/or --mitigation")
    text = "\n\n".join(parts) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apsmon", description="APS fault campaigns and safety-monitor evaluation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a fault campaign")
    s.add_argument("campaign", help="campaign JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--monitor", help="live monitor: " + ", ".join(monitors.MONITOR_NAMES))
    s.add_argument("--thresholds", help="threshold JSON or learn output directory (cawt)")
    s.add_argument("--mitigate", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--profiles", help="patient profile JSON (default: shipped cohort)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("label", help="recompute hazard labels")
    s.add_argument("campaign")
    s.add_argument("--out", help="write here instead of in place")
    s.add_argument("--window", type=int, default=risk.DEFAULT_WINDOW)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("learn", help="learn thresholds with per-patient k-fold CV")
    s.add_argument("campaign")
    s.add_argument("--out", required=True)
    s.add_argument("--folds", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_learn)

    s = sub.add_parser("eval", help="replay monitors over a campaign")
    s.add_argument("campaign")
    s.add_argument("--out", required=True)
    s.add_argument("--thresholds")
    s.add_argument("--monitors", default="cawt,cawot,guideline,mpc")
    s.add_argument("--delta", type=int, default=metrics.DEFAULT_DELTA)
    s.add_argument("--profiles")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("mitigate-eval", help="recovery study on a paired campaign")
    s.add_argument("baseline")
    s.add_argument("mitigated", nargs="?", help="existing mitigated campaign (else re-run live)")
    s.add_argument("--out", required=True)
    s.add_argument("--monitor", default="cawt")
    s.add_argument("--thresholds")
    s.add_argument("--profiles")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_mitigate_eval)

    s = sub.add_parser("report", help="summary tables from eval / mitigate-eval outputs")
    s.add_argument("--eval", action="append")
    s.add_argument("--mitigation", action="append")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
