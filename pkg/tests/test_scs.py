import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apsmon import scs, stl
from apsmon.scs import DECREASE, INCREASE, KEEP, STOP, ContextVector

RULES = scs.default_ruleset()


def test_rule_inventory():
    assert len(RULES) == 12
    forbid = Counter(r.action for r in RULES if r.forbidden)
    assert forbid == {DECREASE: 5, INCREASE: 3, STOP: 1, KEEP: 2}
    required = [r for r in RULES if not r.forbidden]
    assert [(r.id, r.action) for r in required] == [(10, STOP)]


def test_hazard_tags():
    assert {r.id for r in RULES if r.hazard == "H2"} == {1, 2, 3, 4, 5, 9, 11}
    assert {r.id for r in RULES if r.hazard == "H1"} == {6, 7, 8, 10, 12}


def test_slots_are_distinct():
    assert len(set(scs.SLOT_NAMES)) == 12
    assert "b21" in scs.SLOT_NAMES
    for r in RULES:
        assert stl.slots(r.formula) == {r.slot}


def test_cawot_defaults():
    th = scs.cawot_thresholds()
    assert th["b1"] == math.inf and th["b6"] == 0.0 and th["b21"] == 70.0


def test_classify_action():
    assert scs.classify_action(0.0, 1.0) == STOP
    assert scs.classify_action(0.5, 1.0) == DECREASE
    assert scs.classify_action(1.04, 1.0) == KEEP
    assert scs.classify_action(0.96, 1.0) == KEEP
    assert scs.classify_action(1.5, 1.0) == INCREASE
    with pytest.raises(ValueError):
        scs.classify_action(-0.1, 1.0)


@given(st.floats(0.0, 10.0), st.floats(0.05, 5.0))
def test_actions_partition_commands(cmd, basal):
    a = scs.classify_action(cmd, basal)
    assert a in scs.ACTIONS
    assert (a == STOP) == (cmd == 0.0)


def test_context_examples():
    bg, iob = [100.0, 110.0, 105.0], [1.0, 1.5, 1.5]
    assert scs.context_of(bg, iob, 0) == ContextVector(100.0, 0.0, 1.0, 0.0)
    assert scs.context_of(bg, iob, 1) == ContextVector(110.0, 2.0, 1.5, 0.1)
    assert scs.context_of(bg, iob, 2) == ContextVector(105.0, -1.0, 1.5, 0.0)


def test_rule_one_example():
    r = RULES[0]
    ctx = ContextVector(200.0, 1.0, 0.5, -0.01)
    assert r.violated(ctx, DECREASE, {"b1": 1.0})
    assert not r.violated(ctx, DECREASE, {"b1": 0.4})
    assert not r.violated(ctx, KEEP, {"b1": 1.0})


def test_stop_rule_requires_stop():
    r = RULES[9]
    assert r.id == 10
    low = ContextVector(60.0, 0.0, 0.0, 0.0)
    assert r.violated(low, KEEP, {"b21": 70.0})
    assert not r.violated(low, STOP, {"b21": 70.0})
    assert not r.violated(ContextVector(80.0, 0.0, 0.0, 0.0), KEEP, {"b21": 70.0})


contexts = st.builds(
    ContextVector,
    st.floats(40.0, 300.0),
    st.sampled_from([-2.0, 0.0, 2.0]),
    st.floats(-5.0, 5.0),
    st.sampled_from([-0.1, -1e-4, 0.0, 1e-4, 0.1]),
)
slot_values = st.fixed_dictionaries({s: st.floats(-5.0, 5.0) for s in scs.SLOT_NAMES if s != "b21"})


@given(contexts, slot_values)
def test_rules_sharing_an_action_are_exclusive(ctx, slots):
    b = {**slots, "b21": 70.0}
    for action in (DECREASE, INCREASE, KEEP):
        group = [r for r in RULES if r.forbidden and r.action == action]
        assert sum(r.context_holds(ctx, b) for r in group) <= 1


@st.composite
def scenario(draw):
    n = draw(st.integers(2, 10))
    bg = draw(st.lists(st.sampled_from([60.0, 100.0, 120.0, 140.0, 200.0]), min_size=n, max_size=n))
    iob = np.cumsum(draw(st.lists(st.sampled_from([-0.5, -0.001, 0.0, 0.001, 0.5]), min_size=n, max_size=n)))
    acts = draw(st.lists(st.sampled_from(scs.ACTIONS), min_size=n, max_size=n))
    slots = draw(slot_values)
    return bg, iob.tolist(), acts, {**slots, "b21": draw(st.sampled_from([65.0, 70.0]))}


@given(scenario())
def test_stl_and_direct_evaluation_agree(case):
    bg, iob, acts, b = case
    tr = scs.stl_signal_trace(bg, iob, acts)
    bindings = {**b, "BGT": scs.DEFAULT_TARGET}
    for r in RULES:
        ok = stl.satisfaction(r.body, tr, bindings)
        for t in range(len(bg)):
            assert (not ok[t]) == r.violated(scs.context_of(bg, iob, t), acts[t], bindings), (r.id, t)


def test_threshold_json_round_trip(tmp_path):
    ts = scs.ThresholdSet({**scs.cawot_thresholds(), "b3": 1.25}, {"fold": 2, "hash": scs.training_hash(["b", "a"])})
    path = tmp_path / "t.json"
    ts.save(path)
    back = scs.ThresholdSet.load(path)
    assert back.slots == ts.slots and back.provenance == ts.provenance
    assert '"inf"' in path.read_text()
    assert scs.training_hash(["a", "b"]) == scs.training_hash(["b", "a"])


def test_hms_rules():
    hms = scs.default_hms(deadline=30.0)
    assert len(hms) == 12
    assert {h.actions for h in hms if h.hazard == "H1"} == {(STOP,)}
    assert {h.actions for h in hms if h.hazard == "H2"} == {(INCREASE,)}
    assert stl.parse(stl.to_text(hms[0].formula)) == hms[0].formula


def test_hms_deadline():
    # 10th percentile of 10..100 is 19 min, snapped down to the 5-min grid
    assert scs.hms_deadline(list(range(10, 101, 10))) == 15.0
    assert scs.hms_deadline([1.0]) == 5.0
    with pytest.raises(ValueError):
        scs.hms_deadline([None, -5.0])
