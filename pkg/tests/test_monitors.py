import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from apsmon import glucose, monitors, scs
from apsmon.monitors import (
    GuidelineConfig,
    GuidelineMonitor,
    MitigationConfig,
    Mitigator,
    MPCMonitor,
    Verdict,
)


def test_verdict_codes():
    v = Verdict("H1", "r6")
    assert v.code == "H1:r6" and Verdict.from_code("H1:r6") == v
    assert Verdict.from_code("") == monitors.SAFE and not monitors.SAFE.unsafe
    with pytest.raises(ValueError):
        Verdict("H3", "x")


def test_cawt_rule_one():
    th = {**scs.cawot_thresholds(), "b1": 1.0}
    mon = monitors.cawt(th, basal_rate=1.0)
    mon.observe(190.0, 0.6, 1.0)
    # BG rising, IOB falling below 1.0, command below basal
    assert mon.observe(200.0, 0.5, 0.5) == Verdict("H2", "r1")
    mon.reset()
    mon.observe(190.0, 1.6, 1.0)
    assert not mon.observe(200.0, 1.5, 0.5).unsafe


def test_cawot_flags_every_context_match():
    mon = monitors.cawot(basal_rate=1.0)
    mon.observe(190.0, 30.0, 1.0)
    assert mon.observe(200.0, 29.0, 0.5) == Verdict("H2", "r1")


def test_stop_rule_in_both_monitors():
    for mon in (monitors.cawot(1.0), monitors.cawt({**scs.cawot_thresholds(), "b21": 65.0}, 1.0)):
        v = mon.observe(60.0, 0.0, 1.0)
        assert v == Verdict("H1", "r10")
        assert not mon.observe(60.0, 0.0, 0.0).unsafe


def test_missing_or_nan_thresholds():
    with pytest.raises(monitors.UnresolvedThresholdError):
        monitors.cawt({"b1": 1.0}, 1.0)
    with pytest.raises(monitors.UnresolvedThresholdError):
        monitors.cawt({**scs.cawot_thresholds(), "b3": math.nan}, 1.0)


def test_guideline_examples():
    cfg = GuidelineConfig(lambda10=100.0, lambda90=160.0)
    mon = GuidelineMonitor(cfg)
    assert mon.observe(65.0) == Verdict("H1", "phi1")
    mon.reset()
    assert mon.observe(190.0) == Verdict("H2", "phi1")
    mon.reset()
    mon.observe(130.0)
    assert mon.observe(124.0) == Verdict("H1", "phi2")
    mon.reset()
    mon.observe(130.0)
    assert mon.observe(134.0) == Verdict("H2", "phi2")


def test_guideline_percentile_rule_waits_alpha():
    mon = GuidelineMonitor(GuidelineConfig(lambda10=100.0, lambda90=160.0))
    codes = [mon.observe(95.0).code for _ in range(8)]
    # alpha = 25 min = 5 steps: the sixth sample below lambda10 closes the window
    assert codes == [""] * 5 + ["H1:phi3"] * 3


def test_guideline_config():
    cfg = GuidelineConfig.from_traces([[100.0 + i for i in range(101)]])
    assert (cfg.lambda10, cfg.lambda90) == (110.0, 190.0)
    with pytest.raises(ValueError):
        GuidelineConfig(150.0, 100.0)
    with pytest.raises(ValueError):
        GuidelineConfig(100.0, 150.0, alpha=7.0)


@pytest.fixture(scope="module")
def population(profiles):
    return glucose.population_params(list(profiles.values()))


def _basal(model):
    return glucose.micro_units_per_min_to_units_per_hour(glucose.steady_basal(model, 120.0))


def test_mpc_quiet_at_steady_state(population):
    mon = MPCMonitor(population)
    b = _basal(population)
    assert all(not mon.observe(120.0, 0.0, b).unsafe for _ in range(10))


def test_mpc_predicts_both_hazards(population):
    b = _basal(population)
    # insulin on board keeps a zero command from lifting BG fast, so start near the limit
    assert MPCMonitor(population).observe(185.0, 0.0, 0.0).hazard == "H2"
    assert MPCMonitor(population).observe(100.0, 0.0, 6 * b).hazard == "H1"


def test_mitigation_policy():
    mit = Mitigator(MitigationConfig(4.0, 4.0))
    assert mit.apply(Verdict("H1", "r6"), 60.0, 1.0) == (0.0, True)
    # still latched while BG is outside the safe band
    assert mit.apply(monitors.SAFE, 65.0, 1.0) == (0.0, True)
    assert mit.apply(monitors.SAFE, 90.0, 1.0) == (1.0, False)
    assert mit.apply(Verdict("H2", "r1"), 250.0, 1.0) == (4.0, True)
    off = Mitigator(MitigationConfig(4.0, 4.0, enabled=False))
    assert off.apply(Verdict("H2", "r1"), 250.0, 1.0) == (1.0, False)
    with pytest.raises(ValueError):
        MitigationConfig(5.0, 4.0)


@given(st.lists(st.tuples(st.sampled_from(["", "H1:r6", "H2:r1"]), st.floats(40.0, 300.0), st.floats(0.0, 4.0)),
                max_size=40))
def test_mitigated_command_within_pump_range(steps):
    mit = Mitigator(MitigationConfig(4.0, 4.0))
    for code, bg, cmd in steps:
        out, _ = mit.apply(Verdict.from_code(code), bg, cmd)
        assert 0.0 <= out <= 4.0


# -- offline replay agrees with the live loop -------------------------------------

signals = st.integers(2, 30).flatmap(lambda n: st.tuples(
    st.lists(st.floats(40.0, 300.0), min_size=n, max_size=n),
    st.lists(st.floats(-3.0, 3.0), min_size=n, max_size=n),
    st.lists(st.sampled_from([0.0, 0.5, 1.0, 1.02, 2.0]), min_size=n, max_size=n),
))
slot_values = st.fixed_dictionaries({s: st.floats(-3.0, 3.0) for s in scs.SLOT_NAMES if s != "b21"})


@given(signals, slot_values)
def test_context_monitor_offline_equals_online(sig, slots):
    bg, iob, cmd = sig
    for mon in (monitors.cawt({**slots, "b21": 70.0}, 1.0), monitors.cawot(1.0)):
        assert mon.evaluate(bg, iob, cmd) == monitors.replay(mon, bg, iob, cmd)


@given(signals)
def test_guideline_offline_equals_online(sig):
    bg, iob, cmd = sig
    mon = GuidelineMonitor(GuidelineConfig(100.0, 160.0))
    assert mon.evaluate(bg, iob, cmd) == monitors.replay(mon, bg, iob, cmd)


@settings(max_examples=15)
@given(signals)
def test_mpc_offline_equals_online(population, sig):
    bg, iob, cmd = sig
    mon = MPCMonitor(population, horizon=60.0)
    assert mon.evaluate(bg, iob, cmd) == monitors.replay(mon, bg, iob, cmd)


@given(signals, slot_values, st.sampled_from([r for r in scs.default_ruleset() if r.slot != "b21"]), st.floats(0.0, 2.0))
def test_loosening_a_threshold_only_adds_alarms(sig, slots, rule, shift):
    bg, iob, cmd = sig
    th = {**slots, "b21": 70.0}
    wider = dict(th)
    # '<' rules fire more as beta grows, '>' rules as it shrinks
    wider[rule.slot] += shift if rule.slot_op == "<" else -shift
    a = monitors.cawt(th, 1.0).rule_masks(bg, iob, cmd)[rule.id]
    b = monitors.cawt(wider, 1.0).rule_masks(bg, iob, cmd)[rule.id]
    assert np.all(b[a])
