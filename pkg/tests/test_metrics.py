import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apsmon import metrics, risk
from apsmon.metrics import ConfusionCounts

from builders import make_trace
from oracles import naive_confusion


def test_worked_example():
    # hazard at 5, delta 2: times 3..5 are positive; an alert at 4 covers them
    pred = [0, 1, 0, 0, 1, 0, 0, 0]
    truth = [0, 0, 0, 0, 0, 1, 0, 0]
    assert metrics.sample_confusion(pred, truth, 2) == ConfusionCounts(tp=2, fp=1, fn=1, tn=4)


def test_delta_zero_is_pointwise():
    pred = np.array([1, 0, 1, 0, 1], dtype=bool)
    truth = np.array([1, 1, 0, 0, 1], dtype=bool)
    c = metrics.sample_confusion(pred, truth, 0)
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 1)


def test_tail_without_hazard_is_negative():
    c = metrics.sample_confusion([0] * 10, [0] * 10, 12)
    assert c == ConfusionCounts(tn=10)


def test_rates():
    c = ConfusionCounts(tp=3, fp=1, fn=1, tn=5)
    assert (c.fpr, c.fnr, c.acc, c.f1) == (1 / 6, 1 / 4, 0.8, 0.75)
    assert math.isnan(ConfusionCounts().f1)
    assert ConfusionCounts().to_dict()["f1"] is None
    assert metrics.total([c, c]).tp == 6
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


def test_bad_inputs():
    with pytest.raises(ValueError):
        metrics.sample_confusion([0, 1], [0], 1)
    with pytest.raises(ValueError):
        metrics.sample_confusion([0], [0], -1)


@settings(max_examples=300)
@given(st.integers(0, 40).flatmap(lambda n: st.tuples(
    st.lists(st.booleans(), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n),
    st.integers(0, 15),
)))
def test_matches_enumerator(case):
    pred, truth, delta = case
    got = metrics.sample_confusion(pred, truth, delta)
    assert (got.tp, got.fp, got.fn, got.tn) == naive_confusion(pred, truth, delta)
    assert got.total == len(pred)


def test_simulation_confusion_regions():
    alarm = [0, 0, 1, 0, 0, 0]
    assert metrics.simulation_confusion(alarm, True, 3) == ConfusionCounts(fp=1, fn=1)
    assert metrics.simulation_confusion(alarm, True, 2) == ConfusionCounts(tp=1, tn=1)
    assert metrics.simulation_confusion(alarm, False, None) == ConfusionCounts(fp=1)
    assert metrics.simulation_confusion([0, 0], False, 0) == ConfusionCounts(tn=1)


def test_reaction_time():
    alarm = [0, 1, 0, 1, 0, 0]
    assert metrics.reaction_time(alarm, 5, 2) == 10.0
    assert metrics.reaction_time(alarm, 2, 0) == 5.0
    assert metrics.reaction_time(alarm, None, 0) is None
    assert metrics.reaction_time([0] * 6, 4, 0) is None


def test_coverage_and_time_to_hazard():
    hz = make_trace([120.0] * 4, [0.0] * 4, [1.0] * 4, fault_index=1, label=["", "", "", "H1"])
    ok = make_trace([120.0] * 4, [0.0] * 4, [1.0] * 4, fault_index=1)
    free = make_trace([120.0] * 4, [0.0] * 4, [1.0] * 4)
    assert metrics.hazard_coverage([hz, ok, free]) == 0.5
    assert metrics.time_to_hazard(hz) == 10.0
    assert metrics.time_to_hazard(ok) is None
    with pytest.raises(ValueError):
        metrics.hazard_coverage([free])


def test_recovery_rate():
    base = {"a": True, "b": True, "c": False, "d": True}
    mit = {"a": False, "b": True, "c": True, "d": False}
    s = metrics.recovery_rate(base, mit)
    assert (s.rate, s.prevented, s.baseline_hazards, s.new_hazards) == (2 / 3, 2, 3, 1)
    with pytest.raises(ValueError):
        metrics.recovery_rate(base, {"a": False})


def test_average_risk_examples():
    # two missed hazards and one new one over ten runs
    assert metrics.average_risk([4.0, 6.0], [10.0], 10) == 2.0
    assert metrics.average_risk([], [], 3) == 0.0
    with pytest.raises(ValueError):
        metrics.average_risk([1.0], [], 0)


def test_trace_mean_risk():
    tr = make_trace([50.0] * 12, [0.0] * 12, [0.0] * 12)
    assert metrics.trace_mean_risk(tr) == pytest.approx(risk.risk(50.0))


def test_percentiles_and_histogram():
    p = metrics.percentiles(list(range(11)))
    assert p["p10"] == 1.0 and p["p50"] == 5.0
    assert metrics.percentiles([])["p90"] is None
    assert metrics.histogram([1.0, 12.0, 15.0]) == "# bin_left count\n0 1\n10 2\n"


def test_json_and_csv():
    assert metrics.to_json({"x": math.nan, "y": np.float64(1.5)}) == '{\n  "x": null,\n  "y": 1.5\n}\n'
    assert metrics.rows_to_csv([{"a": 1, "b": None}]) == "a,b\n1,\n"
