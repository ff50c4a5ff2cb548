import math

from hypothesis import given, strategies as st
import numpy as np
import pytest

from pulsemech.errors import RegimeError
from pulsemech.gaussian import MechGaussianState, make_thermal_state, n_bar, paper_oscillator
from pulsemech.pulse import (
    NoiseSpec, PulseOutcome, PulseSpec, chi, condition_approx, condition_exact, momentum_kick,
    sample_outcome, to_abs_units, to_pl_units,
)
from pulsemech.rng import stream
from oracles import grid_bayes_posterior


def test_strength_and_kick_at_reference_inputs():
    p = PulseSpec(1e7)
    assert chi(p, 5.7e-15) == pytest.approx(2.1e-4, rel=0.03)
    assert momentum_kick(p, 5.7e-15) == pytest.approx(1.35, rel=0.01)


@given(st.floats(1.0, 1e12), st.floats(1e-16, 1e-13))
def test_kick_is_chi_squared_times_wavelength_factor(N, x0):
    p = PulseSpec(N)
    # Omega = chi^2 * lambda / (2 pi x0)
    assert momentum_kick(p, x0) == pytest.approx(chi(p, x0) ** 2 * p.wavelength / (2 * math.pi * x0), rel=1e-9)


def test_unit_conversion_roundtrip():
    assert to_abs_units(to_pl_units(3.0e9, 1e10), 1e10) == pytest.approx(3.0e9)
    assert NoiseSpec(electronic_variance=1e10).electronic_variance_pl(1e10) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        to_pl_units(1.0, 0.0)


def test_noise_spec_validation_and_correlation():
    with pytest.raises(ValueError):
        NoiseSpec(classical_phase_coeff=-1.0)
    ns = NoiseSpec(1e-8, 1e-3)
    assert ns.correlation(0.0) == 1.0
    assert ns.correlation(1e-3) == pytest.approx(math.exp(-1))
    assert NoiseSpec(1e-8, 0.0).correlation(1e-6) == 0.0
    assert NoiseSpec().is_ideal


def test_sample_outcome_statistics():
    s = make_thermal_state(0.0, paper_oscillator(), batch=200_000)
    out = sample_outcome(s, 0.5, NoiseSpec(), rng=stream(1))
    # shot 1/2 plus chi^2 * 1/2
    assert np.var(out.value) == pytest.approx(0.5 + 0.25 * 0.5, rel=0.02)
    np.testing.assert_array_equal(out.value, out.optical)


def test_sample_outcome_needs_photon_number_for_electronic_noise():
    s = make_thermal_state(0.0, paper_oscillator())
    with pytest.raises(ValueError):
        sample_outcome(s, 0.5, NoiseSpec(electronic_variance=1.0), rng=stream(1))
    out = sample_outcome(s, 0.5, NoiseSpec(electronic_variance=1.0), rng=stream(1), N_tot=1e10)
    assert isinstance(out.value, float)


def test_non_finite_outcome_rejected():
    with pytest.raises(ValueError):
        PulseOutcome(value=math.nan, optical=0.0)
    s = make_thermal_state(0.0, paper_oscillator())
    with pytest.raises(ValueError):
        condition_exact(s, math.inf, 0.1, 0.0)


def test_update_is_on_optical_part_of_outcome():
    s = make_thermal_state(100.0, paper_oscillator())
    a = condition_exact(s, PulseOutcome(value=5.0, optical=1.0), 0.3, 0.0)
    b = condition_exact(s, 1.0, 0.3, 0.0)
    np.testing.assert_array_equal(a.mean, b.mean)


@given(st.floats(0.5, 50), st.floats(0.5, 50), st.floats(-0.9, 0.9), st.floats(0.05, 2.0),
       st.floats(-3, 3), st.floats(-2, 2))
def test_exact_update_matches_grid_bayes(vx, vp, corr, chi_, z, Omega):
    cov = np.array([[vx, corr * math.sqrt(vx * vp)], [corr * math.sqrt(vx * vp), vp]])
    if np.linalg.det(cov) < 0.25:
        cov = cov * (0.26 / np.linalg.det(cov)) ** 0.5
    mean = np.array([0.4, -0.7])
    q = chi_ * mean[0] + z * math.sqrt(0.5 + chi_ ** 2 * cov[0, 0])
    post = condition_exact(MechGaussianState(mean, cov), q, chi_, Omega)
    m, c = grid_bayes_posterior(mean, cov, q, chi_, Omega)
    scale = np.sqrt(np.diag(c))
    np.testing.assert_allclose(post.mean / scale, m / scale, atol=1e-4)
    np.testing.assert_allclose(post.cov, c, rtol=1e-4, atol=1e-4 * scale[0] * scale[1])


@given(st.floats(1e6, 1e11), st.floats(1e-4, 1e-2))
def test_conditioning_never_breaks_heisenberg(nb, chi_):
    s = MechGaussianState(np.zeros(2), np.diag([nb + 0.5, nb + 0.5]))
    post = condition_exact(s, 0.0, chi_, 1.0)
    assert np.linalg.det(post.cov) >= 0.25 * (1 - 1e-9)
    assert post.var_x <= s.var_x


def test_approximate_update_agrees_for_large_occupation():
    osc = paper_oscillator()
    nb = n_bar(1100.0, osc)
    s = make_thermal_state(1100.0, osc)
    c = 2.1e-4
    exact = condition_exact(s, 0.3, c, 1.35)
    approx = condition_approx(s, 0.3, c, 1.35, nb)
    np.testing.assert_allclose(np.diag(approx.cov), np.diag(exact.cov), rtol=2e-3)
    assert approx.mean[0] == pytest.approx(exact.mean[0], rel=2e-3)


def test_approximate_update_refuses_weak_measurement():
    s = make_thermal_state(0.0, paper_oscillator())
    with pytest.raises(RegimeError) as exc:
        condition_approx(s, 0.0, 0.1, 0.0, 0.0)
    assert exc.value.code == "weak-measurement"
