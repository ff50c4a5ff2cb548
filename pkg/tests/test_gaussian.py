import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from pulsemech.errors import UnphysicalStateError
from pulsemech.gaussian import (
    MechGaussianState, OscillatorParams, effective_occupation, effective_temperature, evolve,
    make_thermal_state, n_bar, paper_oscillator, physical_width, retherm, zero_point,
)
from oracles import thermal_occupation

angles = st.floats(-10, 10, allow_nan=False)
variances = st.floats(0.5, 1e6)


def random_state(v1, v2, rot):
    R = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
    return MechGaussianState(np.array([0.3, -1.2]), R @ np.diag([v1, v2 * max(1.0, 0.25 / (v1 * v2))]) @ R.T)


def test_zero_point_of_reference_oscillator():
    osc = paper_oscillator()
    assert zero_point(osc) == pytest.approx(5.7264e-15, rel=1e-4)


def test_n_bar_matches_bose_and_classical_limit():
    osc = paper_oscillator()
    assert n_bar(1100.0, osc) == pytest.approx(thermal_occupation(1100.0, osc.omega_M), rel=1e-12)
    assert n_bar(1100.0, osc) == pytest.approx(1100.0 / osc.quantum_temperature, abs=1.0)
    assert n_bar(0.0, osc) == 0.0
    with pytest.raises(ValueError):
        n_bar(-1.0, osc)


def test_oscillator_validation():
    with pytest.raises(ValueError):
        OscillatorParams(omega_M=0.0, m_eff=1e-12)
    with pytest.raises(ValueError):
        OscillatorParams(omega_M=1.0, m_eff=-1.0)


def test_sub_heisenberg_state_rejected():
    with pytest.raises(UnphysicalStateError):
        MechGaussianState(np.zeros(2), np.diag([0.1, 0.1]))
    with pytest.raises(UnphysicalStateError):
        MechGaussianState(np.zeros(2), np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_quarter_period_swaps_quadratures():
    s = MechGaussianState(np.array([1.0, 2.0]), np.diag([3.0, 5.0]))
    e = evolve(s, math.pi / 2)
    np.testing.assert_allclose(e.mean, [2.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(np.diag(e.cov), [5.0, 3.0], atol=1e-12)
    assert e.phase_tag == pytest.approx(math.pi / 2)


@given(angles, angles, variances, variances, angles)
def test_evolution_composes_and_preserves_determinant(a, b, v1, v2, rot):
    s = random_state(v1, v2, rot)
    one = evolve(evolve(s, a), b)
    two = evolve(s, a + b)
    np.testing.assert_allclose(one.cov, two.cov, rtol=1e-9, atol=1e-9 * v1 * v2)
    assert np.linalg.det(one.cov) == pytest.approx(np.linalg.det(s.cov), rel=1e-9)


@given(variances, variances, angles)
def test_effective_occupation_rotation_invariant(v1, v2, rot):
    s = random_state(v1, v2, rot)
    assert effective_occupation(evolve(s, 0.7)) == pytest.approx(effective_occupation(s), rel=1e-9, abs=1e-9)
    assert effective_occupation(s) >= -1e-9


def test_thermal_state_occupation():
    osc = paper_oscillator()
    s = make_thermal_state(1100.0, osc, batch=4)
    assert s.batch_size == 4
    assert effective_occupation(s) == pytest.approx(n_bar(1100.0, osc), rel=1e-12)


@given(st.floats(0, 1e3), st.floats(0.5, 1e12))
def test_retherm_relaxes_toward_bath(dt, v):
    osc = paper_oscillator()
    s = MechGaussianState(np.array([100.0, 0.0]), np.diag([v, v]))
    r = retherm(s, dt, osc)
    v_bath = n_bar(osc.T_bath, osc) + 0.5
    relaxed = -math.expm1(-osc.gamma * dt)
    assert r.var_x == pytest.approx((1 - relaxed) * v + relaxed * v_bath, rel=1e-9)
    assert abs(r.mean[0]) <= 100.0 + 1e-12


def test_retherm_rejects_negative_time():
    with pytest.raises(ValueError):
        retherm(make_thermal_state(1.0, paper_oscillator()), -1.0, paper_oscillator())


def test_effective_temperature_of_thermal_widths():
    osc = paper_oscillator()
    v = n_bar(1100.0, osc) + 0.5
    w = physical_width(v, osc)
    assert effective_temperature(w, w, osc) == pytest.approx(v * osc.quantum_temperature, rel=1e-12)
    assert w == pytest.approx(1.236e-9, rel=1e-3)
