"""Evaluation metrics for monitors over labeled campaigns."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import risk

DEFAULT_DELTA = 12


def _ratio(num: float, den: float) -> float:
    return num / den if den else math.nan


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("counts must be >= 0")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def fpr(self) -> float:
        return _ratio(self.fp, self.fp + self.tn)

    @property
    def fnr(self) -> float:
        return _ratio(self.fn, self.fn + self.tp)

    @property
    def acc(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def f1(self) -> float:
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(fpr=self.fpr, fnr=self.fnr, acc=self.acc, f1=self.f1)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in out.items()}


def total(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    out = ConfusionCounts()
    for c in counts:
        out = out + c
    return out


def sample_confusion(pred: Sequence, truth: Sequence, delta: int = DEFAULT_DELTA) -> ConfusionCounts:
    """Sample-level confusion with a tolerance window of ``delta`` samples.

    A time t is ground-truth positive when a hazard sample lies in
    [t, t + delta]; it is a TP when some alert lies in [t_g - delta, t],
    where t_g is the first hazard sample at or after t (the left-most
    window ending at a hazard that still covers t). Ground-truth negative
    times are FP when alerted and TN otherwise.
    """
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(truth, dtype=bool)
    if p.shape != g.shape or p.ndim != 1:
        raise ValueError(f"prediction and truth must be 1-D of equal length, got {p.shape} and {g.shape}")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    n = p.size
    if n == 0:
        return ConfusionCounts()
    idx = np.arange(n)
    # Next hazard sample at or after each t.
    nxt = np.full(n + 1, n, dtype=int)
    for t in range(n - 1, -1, -1):
        nxt[t] = t if g[t] else nxt[t + 1]
    t_g = nxt[:n]
    positive = (t_g < n) & (t_g <= idx + delta)
    cp = np.concatenate([[0], np.cumsum(p)])
    start = np.clip(t_g - delta, 0, n)
    hit = positive & (cp[idx + 1] - cp[np.minimum(start, idx + 1)] > 0)
    tp = int(np.sum(hit))
    fn = int(np.sum(positive & ~hit))
    fp = int(np.sum(~positive & p))
    tn = int(np.sum(~positive & ~p))
    return ConfusionCounts(tp, fp, fn, tn)


def simulation_confusion(alarm: Sequence, hazardous: bool, fault_index: int | None) -> ConfusionCounts:
    """Two-region accounting split at fault activation, one unit per region."""
    a = np.asarray(alarm, dtype=bool)
    if fault_index is None:
        regions = [(a, hazardous)]
    else:
        regions = [(a[:fault_index], False), (a[fault_index:], hazardous)]
    tp = fp = fn = tn = 0
    for seg, hz in regions:
        if seg.size == 0:
            continue
        alerted = bool(seg.any())
        if hz:
            tp += alerted
            fn += not alerted
        else:
            fp += alerted
            tn += not alerted
    return ConfusionCounts(tp, fp, fn, tn)


def hazard_coverage(traces: Sequence) -> float:
    faulted = [t for t in traces if t.fault_index is not None]
    if not faulted:
        raise ValueError("no trace with an activated fault")
    return sum(t.hazard.hazardous for t in faulted) / len(faulted)


def time_to_hazard(trace) -> float | None:
    """Minutes from fault activation to hazard onset."""
    tf, th = trace.fault_index, trace.hazard.onset_index
    if tf is None or th is None:
        return None
    return (th - tf) * trace.dt


def reaction_time(alarm: Sequence, hazard_onset: int | None, fault_index: int | None, dt: float = 5.0) -> float | None:
    """Hazard onset minus the first alert at or after the fault, in minutes; positive is early."""
    if hazard_onset is None:
        return None
    a = np.asarray(alarm, dtype=bool)
    start = fault_index or 0
    hits = np.flatnonzero(a[start:])
    if hits.size == 0:
        return None
    return (hazard_onset - (start + int(hits[0]))) * dt


@dataclass(frozen=True)
class RecoveryStats:
    rate: float
    prevented: int
    baseline_hazards: int
    new_hazards: int


def recovery_rate(baseline: Mapping[str, bool], mitigated: Mapping[str, bool]) -> RecoveryStats:
    """Hazard outcomes keyed by scenario id, without and with mitigation."""
    if set(baseline) != set(mitigated):
        missing = sorted(set(baseline) ^ set(mitigated))[:5]
        raise ValueError(f"unpaired scenarios, e.g. {missing}")
    base = [k for k, v in baseline.items() if v]
    prevented = sum(not mitigated[k] for k in base)
    new = sum(1 for k, v in baseline.items() if not v and mitigated[k])
    return RecoveryStats(_ratio(prevented, len(base)) if base else 0.0, prevented, len(base), new)


def average_risk(fn_risks: Sequence[float], new_hazard_risks: Sequence[float], n: int) -> float:
    """Mean risk index charged to missed and newly induced hazards, over all ``n`` runs."""
    if n <= 0:
        raise ValueError("n must be > 0")
    return (float(np.sum(fn_risks)) + float(np.sum(new_hazard_risks))) / n


def trace_mean_risk(trace) -> float:
    return risk.mean_risk_index(trace.true_bg)


def percentiles(values: Sequence[float], qs=(10, 25, 50, 75, 90)) -> dict[str, float | None]:
    if len(values) == 0:
        return {f"p{q}": None for q in qs}
    arr = np.asarray(values, dtype=float)
    return {f"p{q}": float(np.percentile(arr, q)) for q in qs}


def histogram(values: Sequence[float], bin_width: float = 10.0) -> str:
    """Two-column ``bin_left count`` data for plotting."""
    if len(values) == 0:
        return "# bin_left count\n"
    arr = np.asarray(values, dtype=float)
    lo = math.floor(arr.min() / bin_width) * bin_width
    hi = math.floor(arr.max() / bin_width) * bin_width + bin_width
    edges = np.arange(lo, hi + bin_width / 2, bin_width)
    counts, _ = np.histogram(arr, edges)
    lines = ["# bin_left count"] + [f"{e:g} {c}" for e, c in zip(edges[:-1], counts)]
    return "\n".join(lines) + "\n"


def to_json(obj) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return clean(v.item())
        return v

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()
