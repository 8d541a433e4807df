import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apsmon import glucose
from apsmon.glucose import PatientParams, PatientState, derivatives, steady_basal, steady_state, step


def _flat_params(**kw):
    # Duck-typed parameters so decay terms can be zeroed, which the validated type forbids.
    base = dict(gezi=0.0, egp=1.0, p2=0.01, si=5e-4, tau1=50.0, tau2=50.0, clearance_ml=1000.0)
    base.update(kw)
    return SimpleNamespace(**base)


def test_zero_dynamics_rate():
    rate = derivatives(PatientState(100.0, 0.0, 0.0, 0.0), _flat_params(), 0.0)
    assert rate.dG == 1.0


def test_first_compartment_fixed_point(profiles):
    p = profiles["patientA"]
    flow = 12000.0
    rate = derivatives(PatientState(120.0, flow / p.clearance_ml, 0.0, 0.0), p, flow)
    assert rate.dI_SC == pytest.approx(0.0, abs=1e-15)


def test_step_exact_on_constant_rate():
    s, clamped = step(PatientState(100.0, 0.0, 0.0, 0.0), _flat_params(), 0.0, dt=5.0)
    assert s.G == pytest.approx(105.0, abs=1e-12)
    assert not clamped


def test_steady_basal_formula():
    p = PatientParams("x", 70.0, 15.0, 50.0, 50.0, 0.01, 5e-4, 0.003, 1.2, 250.0)
    # 15 dl/min = 1500 ml/min: 1500 * (0.01 - 0.003) / 5e-4
    assert steady_basal(p, 120.0) == pytest.approx(21000.0, rel=1e-12)
    doubled = PatientParams("y", 70.0, 15.0, 50.0, 50.0, 0.01, 1e-3, 0.003, 1.2, 250.0)
    assert steady_basal(doubled, 120.0) == pytest.approx(10500.0, rel=1e-12)


def test_infeasible_target_names_inequality():
    p = PatientParams("x", 70.0, 15.0, 50.0, 50.0, 0.01, 5e-4, 0.01, 1.2, 250.0)
    with pytest.raises(ValueError, match="EGP/G_T > GEZI"):
        steady_basal(p, 120.0)


def test_settles_to_target_from_perturbed_glucose(profiles):
    for p in profiles.values():
        flow = steady_basal(p, 120.0)
        traj = glucose.simulate_constant(p, steady_state(p, 150.0, flow), flow, 2000)
        assert traj[-1].G == pytest.approx(120.0, abs=0.1), p.name


def test_steady_basal_holds_for_150_steps(profiles):
    for p in profiles.values():
        flow = steady_basal(p, 120.0)
        traj = glucose.simulate_constant(p, steady_state(p, 120.0, flow), flow, 150)
        assert max(abs(s.G - 120.0) for s in traj) <= 0.5, p.name


def _endpoint(p, dt, steps, substeps, flow, start):
    s = start
    for k in range(steps):
        s, _ = step(s, p, flow, dt=dt, t=k * dt, substeps=substeps)
    return s.G


def test_halving_step_changes_endpoint_little(profiles):
    p = profiles["patientA"]
    flow = 1.5 * steady_basal(p, 120.0)
    start = steady_state(p, 150.0, steady_basal(p, 120.0))
    coarse = _endpoint(p, 5.0, 150, 5, flow, start)
    fine = _endpoint(p, 2.5, 300, 5, flow, start)
    assert abs(coarse - fine) < 0.01


def rk4_convergence_factor(p) -> float:
    """Endpoint error ratio when the internal step is halved (h = 5 -> 2.5 min)."""
    flow = 2.0 * steady_basal(p, 120.0)
    start = steady_state(p, 180.0, 0.2 * flow)
    ref = _endpoint(p, 5.0, 150, 40, flow, start)
    e1 = abs(_endpoint(p, 5.0, 150, 1, flow, start) - ref)
    e2 = abs(_endpoint(p, 5.0, 150, 2, flow, start) - ref)
    return e1 / e2


def test_rk4_order(profiles):
    for p in profiles.values():
        assert rk4_convergence_factor(p) >= 8.0, p.name


def test_mass_action_decay(profiles):
    p = profiles["patientC"]
    traj = glucose.simulate_constant(p, steady_state(p, 120.0, steady_basal(p, 120.0)), 0.0, 4000, dt=5.0)
    ins = np.array([[s.I_SC, s.I_P, s.I_EFF] for s in traj])
    assert np.all(np.diff(ins[:, 0]) <= 1e-15)
    assert ins[-1].max() < 1e-6 * ins[0].max()
    assert traj[-1].G == pytest.approx(p.egp / p.gezi, rel=1e-3)


def test_floor_clamp_is_flagged():
    s, clamped = step(PatientState(11.0, 0.0, 0.0, 0.0), _flat_params(egp=-5.0), 0.0)
    assert clamped and s.G == glucose.DEFAULT_GLUCOSE_FLOOR


def test_non_finite_input_rejected(profiles):
    with pytest.raises(glucose.NonFiniteStateError):
        derivatives(PatientState(math.nan, 0, 0, 0), profiles["patientA"], 0.0)
    with pytest.raises(glucose.NonFiniteStateError):
        step(PatientState(120.0, 0, 0, 0), profiles["patientA"], math.inf)


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        PatientParams("x", 70.0, 15.0, 0.5, 50.0, 0.01, 5e-4, 0.003, 1.2, 250.0)
    with pytest.raises(ValueError):
        PatientParams("x", 70.0, 15.0, 50.0, 50.0, 0.01, 5e-4, 1.5, 1.2, 250.0)
    with pytest.raises(ValueError):
        PatientParams("x", 70.0, -1.0, 50.0, 50.0, 0.01, 5e-4, 0.003, 1.2, 250.0)


def test_shipped_cohort(profiles):
    assert len(profiles) == 10
    for p in profiles.values():
        basal = glucose.micro_units_per_min_to_units_per_hour(steady_basal(p, 120.0))
        # The reconstructed cohort spans about 0.15 to 2.2 U/h.
        assert 0.1 <= basal <= 2.5, p.name
    pop = glucose.population_params(list(profiles.values()))
    assert pop.egp == pytest.approx(np.mean([p.egp for p in profiles.values()]))


def test_deterministic(profiles):
    p = profiles["patientF"]
    s0 = steady_state(p, 140.0, 9000.0)
    a = glucose.simulate_constant(p, s0, 15000.0, 50)
    b = glucose.simulate_constant(p, s0, 15000.0, 50)
    assert a == b


def monotone_pair(p, low, extra):
    """Glucose under two delivery sequences, the second pointwise larger."""
    start = steady_state(p, 140.0, steady_basal(p, 120.0))
    s1 = s2 = start
    g1, g2 = [], []
    for k, (a, b) in enumerate(zip(low, extra)):
        s1, _ = step(s1, p, a, t=5.0 * k)
        s2, _ = step(s2, p, a + b, t=5.0 * k)
        g1.append(s1.G)
        g2.append(s2.G)
    return np.array(g1), np.array(g2)


@given(
    patient=st.sampled_from([f"patient{c}" for c in "ABCDEFGHIJ"]),
    low=st.lists(st.floats(0, 60000), min_size=20, max_size=20),
    extra=st.lists(st.floats(0, 60000), min_size=20, max_size=20),
)
def test_more_insulin_never_raises_glucose(patient, low, extra):
    p = glucose.load_profiles()[patient]
    g1, g2 = monotone_pair(p, low, extra)
    assert np.all(g2 <= g1 + 1e-9)
