"""Threshold learning for the UCAS slots from labeled hazardous traces."""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import scs
from ..monitors import ContextAwareMonitor
from .lbfgsb import NonConvergenceError, OptimizerConfig, minimize
from .tmee import R_STAR, tmee, tmee_grad

log = logging.getLogger(__name__)

# Box bounds per slot-bearing signal. Net IOB spans the pump's range either
# side of basal; the required-stop threshold may not exceed the hypoglycemia
# limit of the medical guideline.
SLOT_BOX = {"IOB": (-30.0, 30.0), "BG": (10.0, 70.0)}


class UnlearnableRuleError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSet:
    rule_id: int
    slot: str
    orientation: str  # '<' or '>'
    samples: np.ndarray
    box: tuple[float, float]
    trace_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.orientation not in ("<", ">"):
            raise ValueError(f"orientation must be '<' or '>', got {self.orientation!r}")
        if self.box[0] > self.box[1]:
            raise ValueError("empty box")

    def __len__(self) -> int:
        return len(self.samples)

    def residuals(self, beta: float) -> np.ndarray:
        """Robustness of every sample's slot predicate at ``beta``."""
        return beta - self.samples if self.orientation == "<" else self.samples - beta

    def feasible_interval(self) -> tuple[float, float]:
        lo, hi = self.box
        if self.orientation == "<":
            lo = max(lo, float(self.samples.max()))
        else:
            hi = min(hi, float(self.samples.min()))
        return lo, hi


def qualifying_mask(trace, rule: scs.UCASRule, eps_diob: float = scs.DEFAULT_EPS_DIOB) -> np.ndarray:
    """Instants where the rule's non-slot predicates and its action hold, at or
    after fault activation, and a hazard of the rule's type follows."""
    n = len(trace)
    relaxed = {r.slot: (math.inf if r.slot_op == "<" else -math.inf) for r in scs.default_ruleset()}
    mon = ContextAwareMonitor(relaxed, trace.header["basal_rate"], trace.header.get("target", scs.DEFAULT_TARGET),
                              eps_diob=eps_diob, dt=trace.dt)
    mask = mon.rule_masks(trace.true_bg, trace.iob, trace.raw_cmd)[rule.id]
    hazard_idx = [i for i, v in enumerate(trace.label) if v == rule.hazard]
    if not hazard_idx:
        return np.zeros(n, dtype=bool)
    out = mask.copy()
    out[hazard_idx[-1] + 1:] = False
    start = trace.fault_index
    if start is not None:
        out[:start] = False
    return out


def extract_training_set(traces: Sequence, rule: scs.UCASRule, eps_diob: float = scs.DEFAULT_EPS_DIOB) -> TrainingSet:
    """Slot-signal values at qualifying instants of hazardous traces of the rule's type."""
    values, ids = [], []
    for tr in traces:
        hz = tr.hazard
        if not hz.hazardous or hz.hazard_type != rule.hazard:
            continue
        mask = qualifying_mask(tr, rule, eps_diob)
        if mask.any():
            signal = tr.iob if rule.slot_signal == "IOB" else tr.true_bg
            values.extend(signal[mask].tolist())
            ids.append(tr.scenario_id)
    return TrainingSet(rule.id, rule.slot, rule.slot_op, np.array(values, dtype=float), SLOT_BOX[rule.slot_signal], tuple(ids))


def objective(ts: TrainingSet):
    """Mean TMEE loss of the training set and its derivative in beta."""
    sign = 1.0 if ts.orientation == "<" else -1.0

    def f(x):
        return float(np.mean(tmee(ts.residuals(float(x[0])))))

    def g(x):
        return np.array([sign * float(np.mean(tmee_grad(ts.residuals(float(x[0])))))])

    return f, g


def fit_threshold(ts: TrainingSet, config: OptimizerConfig = OptimizerConfig()) -> float:
    """Tight threshold with every training sample satisfying the slot predicate."""
    return float(fit_threshold_result(ts, config).x[0])


def fit_threshold_result(ts: TrainingSet, config: OptimizerConfig = OptimizerConfig()):
    if len(ts) == 0:
        raise UnlearnableRuleError(f"rule {ts.rule_id}: empty training set")
    lo, hi = ts.feasible_interval()
    if lo > hi:
        raise UnlearnableRuleError(f"rule {ts.rule_id}: samples fall outside the box {ts.box}")
    x0 = min(lo + R_STAR, hi) if ts.orientation == "<" else max(hi - R_STAR, lo)
    f, g = objective(ts)
    return minimize(f, g, [x0], [(lo, hi)], config)


@dataclass
class LearnResult:
    thresholds: scs.ThresholdSet
    unlearnable: list[str] = field(default_factory=list)
    sample_counts: dict[str, int] = field(default_factory=dict)
    logs: dict[str, str] = field(default_factory=dict)  # slot -> convergence CSV


def learn_thresholds(
    traces: Sequence,
    rules: Sequence[scs.UCASRule] | None = None,
    config: OptimizerConfig = OptimizerConfig(),
    provenance: dict | None = None,
) -> LearnResult:
    """Fit every slot; rules without data keep their default slot values."""
    rules = scs.default_ruleset() if rules is None else rules
    slots = scs.cawot_thresholds(rules)
    unlearnable, counts, logs = [], {}, {}
    for rule in rules:
        ts = extract_training_set(traces, rule)
        counts[rule.slot] = len(ts)
        try:
            res = fit_threshold_result(ts, config)
            slots[rule.slot] = float(res.x[0])
            logs[rule.slot] = res.log_csv()
        except UnlearnableRuleError as exc:
            log.info("%s; keeping default %s = %s", exc, rule.slot, slots[rule.slot])
            unlearnable.append(rule.slot)
        except NonConvergenceError as exc:
            log.warning("rule %s did not converge (%s); using best iterate", rule.id, exc)
            slots[rule.slot] = float(exc.best.x[0])
    prov = dict(provenance or {})
    prov.update({
        "training_hash": scs.training_hash([t.scenario_id for t in traces]),
        "unlearnable": unlearnable,
        "sample_counts": counts,
    })
    if len(unlearnable) == len(rules):
        log.warning("no rule could be learned (no hazardous training data); emitting default thresholds")
    return LearnResult(scs.ThresholdSet(slots, prov), unlearnable, counts, logs)


@dataclass
class Fold:
    index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    thresholds: scs.ThresholdSet | None = None
    logs: dict[str, str] = field(default_factory=dict)


def fold_assignment(scenario_ids: Sequence[str], k: int = 4, seed: int = 0, group: str = "") -> dict[str, int]:
    """Deterministic split by scenario id; fold sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be >= 2")
    ids = sorted(set(scenario_ids))
    if len(ids) < k:
        raise InsufficientDataError(f"{len(ids)} traces cannot fill {k} folds")
    rng = np.random.default_rng([seed, zlib.crc32(group.encode())])
    order = rng.permutation(len(ids))
    return {ids[j]: int(pos % k) for pos, j in enumerate(order)}


def cross_validate(
    traces: Sequence,
    k: int = 4,
    seed: int = 0,
    group: str = "",
    config: OptimizerConfig = OptimizerConfig(),
) -> list[Fold]:
    """Learn thresholds on k-1 folds for each held-out fold."""
    assign = fold_assignment([t.scenario_id for t in traces], k, seed, group)
    if sum(t.hazard.hazardous for t in traces) < k:
        log.info("group %r: fewer than %d hazardous traces; some folds keep default thresholds", group, k)
    folds = []
    for i in range(k):
        train = [t for t in traces if assign[t.scenario_id] != i]
        test_ids = tuple(sorted(t.scenario_id for t in traces if assign[t.scenario_id] == i))
        res = learn_thresholds(train, config=config, provenance={"patient": group, "fold": i})
        folds.append(Fold(i, tuple(sorted(t.scenario_id for t in train)), test_ids, res.thresholds, res.logs))
    return folds
