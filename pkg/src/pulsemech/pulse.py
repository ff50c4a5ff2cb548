"""Pulsed position measurement: strength, kick, homodyne sampling, conditioning.

Outcomes are in normalized phase-quadrature units in which optical shot
noise has variance 1/2. Technical noise levels in :class:`NoiseSpec` are
stored in absolute homodyne units (photon-count variance, where one pulse
of ``N_tot`` total photons has shot variance ``N_tot``) and converted with
:func:`to_pl_units`.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import RegimeError, UnphysicalStateError
from .gaussian import MechGaussianState, check_physical

SHOT_VARIANCE = 0.5


@dataclass(frozen=True)
class PulseSpec:
    """Photon numbers of one signal/LO pulse pair."""

    N_signal: float
    N_LO: float = 1e10
    wavelength: float = 1064e-9
    duration: float = 1e-6

    def __post_init__(self):
        if self.N_signal < 0 or self.N_LO < 0:
            raise ValueError("photon numbers must be non-negative")
        if not (self.wavelength > 0 and self.duration > 0):
            raise ValueError("wavelength and duration must be positive")

    @property
    def N_tot(self) -> float:
        return self.N_signal + self.N_LO

    def scaled(self, factor: float) -> "PulseSpec":
        """Same signal/LO ratio with both photon numbers multiplied by ``factor``."""
        return PulseSpec(self.N_signal * factor, self.N_LO * factor, self.wavelength, self.duration)


@dataclass(frozen=True)
class NoiseSpec:
    """Technical noise model.

    classical_phase_coeff
        ``c`` in the absolute-unit classical variance ``c * N_tot**2``.
    classical_corr_time
        Correlation time of the slow phase process (s); ``inf`` means a
        common offset shared by all pulses of one repetition.
    electronic_variance
        Detector noise variance in absolute units, independent of light.
    """

    classical_phase_coeff: float = 0.0
    classical_corr_time: float = math.inf
    electronic_variance: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.classical_phase_coeff < 0 or self.electronic_variance < 0:
            raise ValueError("noise coefficients must be non-negative")
        if not self.classical_corr_time >= 0:
            raise ValueError("classical_corr_time must be non-negative")

    def classical_variance(self, N_tot: float) -> float:
        """Single-pulse classical variance in outcome units."""
        return to_pl_units(self.classical_phase_coeff * N_tot ** 2, N_tot)

    def electronic_variance_pl(self, N_tot: float) -> float:
        return to_pl_units(self.electronic_variance, N_tot)

    def correlation(self, dt):
        """Correlation coefficient of the classical offsets of two pulses ``dt`` apart."""
        dt = np.abs(np.asarray(dt, dtype=float))
        if self.classical_corr_time == 0:
            return np.where(dt == 0, 1.0, 0.0)
        return np.exp(-dt / self.classical_corr_time)

    @property
    def is_ideal(self) -> bool:
        return self.classical_phase_coeff == 0 and self.electronic_variance == 0


def to_pl_units(abs_variance, N_tot):
    """Absolute homodyne variance -> normalized outcome variance."""
    if np.any(np.asarray(N_tot) <= 0):
        raise ValueError("N_tot must be positive")
    return abs_variance / (2.0 * N_tot)


def to_abs_units(pl_variance, N_tot):
    return pl_variance * 2.0 * N_tot


@dataclass(frozen=True, eq=False)
class PulseOutcome:
    """Recorded homodyne outcome.

    ``value`` is what the detector reports. ``optical`` is the shot-limited
    phase quadrature before classical and electronic noise are added; the
    mechanical state is conditioned on it, because those technical noises do
    not act on the mirror.
    """

    value: np.ndarray | float
    optical: np.ndarray | float
    pulse_id: str = ""
    time: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.value)):
            raise ValueError("outcome is not finite")


def chi(pulse: PulseSpec, x0: float) -> float:
    """Measurement strength 4*pi*x0*sqrt(N)/lambda."""
    return 4 * math.pi * x0 * math.sqrt(pulse.N_signal) / pulse.wavelength


def momentum_kick(pulse: PulseSpec, x0: float) -> float:
    """Mean radiation-pressure momentum transfer 8*pi*x0*N/lambda."""
    return 8 * math.pi * x0 * pulse.N_signal / pulse.wavelength


def outcome_variance(state: MechGaussianState, chi_: float, electronic: float = 0.0) -> float:
    return SHOT_VARIANCE + chi_ ** 2 * state.var_x + electronic


def sample_outcome(
    state: MechGaussianState,
    chi_: float,
    noise: NoiseSpec,
    classical_phase_offset=0.0,
    *,
    rng: np.random.Generator,
    N_tot: float | None = None,
    pulse_id: str = "",
    time: float = 0.0,
) -> PulseOutcome:
    """Draw a homodyne outcome from the state's position distribution.

    ``classical_phase_offset`` (outcome units, scalar or one per batch
    member) is supplied by the caller. ``N_tot`` is needed only to convert
    a non-zero electronic noise level.
    """
    offset = np.asarray(classical_phase_offset, dtype=float)
    if not (math.isfinite(chi_) and np.all(np.isfinite(offset))):
        raise ValueError("non-finite measurement input")
    if noise.electronic_variance > 0 and N_tot is None:
        raise ValueError("N_tot is required to convert electronic noise")
    shape = state.mean.shape[:-1]
    quantum_sd = math.sqrt(SHOT_VARIANCE + chi_ ** 2 * state.var_x)
    optical = chi_ * state.mean[..., 0] + quantum_sd * rng.standard_normal(shape)
    value = optical + offset
    if noise.electronic_variance > 0:
        v_el = noise.electronic_variance_pl(N_tot)
        value = value + math.sqrt(v_el) * rng.standard_normal(shape)
    if not shape:
        optical, value = float(optical), float(value)
    return PulseOutcome(value=value, optical=optical, pulse_id=pulse_id, time=time)


def _optical(outcome) -> np.ndarray:
    if isinstance(outcome, PulseOutcome):
        return np.asarray(outcome.optical, dtype=float)
    return np.asarray(outcome, dtype=float)


def condition_exact(state: MechGaussianState, outcome, chi_: float, Omega: float) -> MechGaussianState:
    """Bayesian update on an outcome followed by the pulse's momentum kick.

    The likelihood is P_L | X_M ~ Normal(chi * X_M, 1/2). Afterwards
    <P_M> += Omega and var(P_M) += chi**2 / 2 (back-action of the vacuum
    amplitude quadrature).
    """
    q = _optical(outcome)
    if not np.all(np.isfinite(q)):
        raise ValueError("outcome is not finite")
    cov = np.array(state.cov)
    innovation_var = SHOT_VARIANCE + chi_ ** 2 * cov[0, 0]
    gain = chi_ * cov[:, 0] / innovation_var
    residual = q - chi_ * state.mean[..., 0]
    mean = state.mean + residual[..., None] * gain

    post = np.empty((2, 2))
    shrink = SHOT_VARIANCE / innovation_var
    post[0, 0] = cov[0, 0] * shrink
    post[0, 1] = post[1, 0] = cov[0, 1] * shrink
    post[1, 1] = cov[1, 1] - chi_ ** 2 * cov[0, 1] ** 2 / innovation_var

    mean = mean + np.array([0.0, Omega])
    post[1, 1] += 0.5 * chi_ ** 2
    try:
        check_physical(post)
    except UnphysicalStateError as exc:
        raise UnphysicalStateError(f"conditioning produced an unphysical state: {exc}",
                                   details=exc.details) from exc
    return MechGaussianState(mean=mean, cov=post, phase_tag=state.phase_tag)


def strong_measurement_parameter(chi_: float, n_bar_: float) -> float:
    """chi**2 (1 + 2 n_bar); the approximate update needs this above 1."""
    return chi_ ** 2 * (1.0 + 2.0 * n_bar_)


def condition_approx(state: MechGaussianState, outcome, chi_: float, Omega: float,
                     n_bar_: float) -> MechGaussianState:
    """Large-occupation conditional state, independent of the prior's details."""
    strength = strong_measurement_parameter(chi_, n_bar_)
    if not strength > 1:
        raise RegimeError(
            f"approximate update needs chi^2 (1 + 2 n_bar) > 1, got {strength:.3g}",
            code="weak-measurement",
            details={"chi": chi_, "n_bar": n_bar_, "strength": strength},
        )
    q = _optical(outcome)
    shape = np.broadcast_shapes(q.shape, state.mean.shape[:-1])
    mean = np.empty(shape + (2,))
    mean[..., 0] = q / chi_
    mean[..., 1] = Omega
    cov = np.diag([1.0 / (2 * chi_ ** 2), (chi_ ** 2 + 1 + 2 * n_bar_) / 2])
    return MechGaussianState(mean=mean, cov=cov, phase_tag=state.phase_tag)
