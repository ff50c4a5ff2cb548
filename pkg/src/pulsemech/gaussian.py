"""Gaussian states of a single mechanical mode in dimensionless quadratures.

Convention used throughout the package: the ground state has quadrature
variance 1/2, a thermal state has ``n_bar + 1/2`` per quadrature and the
physical displacement is ``x = sqrt(2) * x0 * X_M``.

A :class:`MechGaussianState` may carry a batch of means with shape
``(n, 2)`` sharing one covariance. This is how the protocol engine runs many
repetitions at once: conditioning moves the means of each repetition by a
different amount but changes every covariance in the same way.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy import constants

from .errors import UnphysicalStateError

PHYS_TOL = 1e-12


@dataclass(frozen=True)
class OscillatorParams:
    """Mechanical mode parameters (SI units)."""

    omega_M: float
    m_eff: float
    Q: float = math.inf
    T_bath: float = 0.0
    hbar: float = constants.hbar
    k_B: float = constants.k

    def __post_init__(self):
        if not self.omega_M > 0:
            raise ValueError(f"omega_M must be positive, got {self.omega_M}")
        if not self.m_eff > 0:
            raise ValueError(f"m_eff must be positive, got {self.m_eff}")
        if not self.Q > 0:
            raise ValueError(f"Q must be positive, got {self.Q}")
        if not self.T_bath >= 0:
            raise ValueError(f"T_bath must be non-negative, got {self.T_bath}")
        x0 = self.x0
        if not (math.isfinite(x0) and x0 > 0):
            raise ValueError("zero-point extension is not finite and positive")

    @classmethod
    def from_frequency(cls, f_hz: float, m_eff: float, **kwargs) -> "OscillatorParams":
        return cls(omega_M=2 * math.pi * f_hz, m_eff=m_eff, **kwargs)

    @property
    def x0(self) -> float:
        return math.sqrt(self.hbar / (2 * self.m_eff * self.omega_M))

    @property
    def gamma(self) -> float:
        """Energy damping rate omega_M / Q (1/s)."""
        return self.omega_M / self.Q

    @property
    def quantum_temperature(self) -> float:
        """hbar * omega_M / k_B (K)."""
        return self.hbar * self.omega_M / self.k_B

    def angle_to_time(self, theta: float) -> float:
        return theta / self.omega_M


def paper_oscillator(**overrides) -> OscillatorParams:
    """The cantilever of the reference experiment: 984.3 Hz, 260 ng, Q = 3.1e4."""
    kwargs = dict(omega_M=2 * math.pi * 984.3, m_eff=260e-12, Q=3.1e4, T_bath=1100.0)
    kwargs.update(overrides)
    return OscillatorParams(**kwargs)


def n_bar(T: float, params: OscillatorParams) -> float:
    """Bose occupation of the mode at temperature ``T``.

    The exact form is used at all temperatures; far above
    ``hbar*omega_M/k_B`` it equals ``k_B*T/(hbar*omega_M)`` to within 1/2.
    """
    if T < 0:
        raise ValueError(f"temperature must be non-negative, got {T}")
    if T == 0:
        return 0.0
    return 1.0 / math.expm1(params.quantum_temperature / T)


def zero_point(params: OscillatorParams) -> float:
    """Ground-state extension x0 = sqrt(hbar / (2 m_eff omega_M)) in meters."""
    return params.x0


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def _as_cov(cov) -> np.ndarray:
    cov = np.array(cov, dtype=float)
    if cov.shape != (2, 2):
        raise UnphysicalStateError(f"covariance must be 2x2, got shape {cov.shape}")
    return cov


def check_physical(cov: np.ndarray, tol: float = PHYS_TOL) -> None:
    """Raise :class:`UnphysicalStateError` unless ``cov`` is a valid quantum covariance."""
    if not np.all(np.isfinite(cov)):
        raise UnphysicalStateError("covariance has non-finite entries")
    scale = max(abs(cov[0, 0]), abs(cov[1, 1]), 1.0)
    if abs(cov[0, 1] - cov[1, 0]) > tol * scale:
        raise UnphysicalStateError("covariance is not symmetric", details={"cov": cov.tolist()})
    if cov[0, 0] <= 0 or cov[1, 1] <= 0:
        raise UnphysicalStateError("covariance is not positive definite",
                                   details={"cov": cov.tolist()})
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det < 0.25 * (1 - tol):
        raise UnphysicalStateError(
            f"covariance violates the Heisenberg bound: det = {det!r} < 1/4",
            details={"cov": cov.tolist(), "det": det},
        )


@dataclass(frozen=True, eq=False)
class MechGaussianState:
    """Mean(s) and covariance of (X_M, P_M).

    ``mean`` has shape ``(2,)`` for a single state or ``(n, 2)`` for a batch
    of states that share ``cov``. ``phase_tag`` is the accumulated evolution
    angle in radians.
    """

    mean: np.ndarray
    cov: np.ndarray
    phase_tag: float = 0.0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        if mean.shape[-1:] != (2,) or mean.ndim > 2:
            raise UnphysicalStateError(f"mean must have shape (2,) or (n, 2), got {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise UnphysicalStateError("mean has non-finite entries")
        cov = _as_cov(self.cov)
        check_physical(cov)
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def var_x(self) -> float:
        return float(self.cov[0, 0])

    @property
    def var_p(self) -> float:
        return float(self.cov[1, 1])

    @property
    def batch_size(self) -> int | None:
        return None if self.mean.ndim == 1 else self.mean.shape[0]

    def replace(self, **changes) -> "MechGaussianState":
        kwargs = dict(mean=self.mean, cov=self.cov, phase_tag=self.phase_tag)
        kwargs.update(changes)
        return MechGaussianState(**kwargs)


def make_thermal_state(T: float, params: OscillatorParams, batch: int | None = None) -> MechGaussianState:
    """Zero-mean thermal state at temperature ``T``."""
    v = n_bar(T, params) + 0.5
    mean = np.zeros(2) if batch is None else np.zeros((batch, 2))
    return MechGaussianState(mean=mean, cov=np.diag([v, v]))


def evolve(state: MechGaussianState, theta: float) -> MechGaussianState:
    """Free harmonic evolution through phase angle ``theta``.

    X picks up the old P at theta = pi/2.
    """
    R = rotation(theta)
    return MechGaussianState(
        mean=state.mean @ R.T,
        cov=R @ state.cov @ R.T,
        phase_tag=state.phase_tag + theta,
    )


def retherm(state: MechGaussianState, dt: float, params: OscillatorParams) -> MechGaussianState:
    """Relax toward the bath thermal state for a time ``dt``.

    Covariance relaxes at the energy damping rate gamma = omega_M / Q, means
    at gamma / 2.
    """
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    relaxed = -math.expm1(-params.gamma * dt)
    if relaxed == 0.0:
        return state
    decay = 1.0 - relaxed
    v_bath = n_bar(params.T_bath, params) + 0.5
    cov = decay * state.cov + relaxed * v_bath * np.eye(2)
    return state.replace(mean=state.mean * math.sqrt(decay), cov=cov)


def retherm_added_variance(dt: float, params: OscillatorParams) -> float:
    """Variance per quadrature injected by the bath during ``dt`` (diagnostic)."""
    return -math.expm1(-params.gamma * dt) * (n_bar(params.T_bath, params) + 0.5)


def effective_occupation(state: MechGaussianState) -> float:
    """n_eff = sqrt(var_1 * var_2) - 1/2 from the principal variances."""
    principal = np.linalg.eigvalsh(state.cov)
    return float(math.sqrt(principal[0] * principal[1]) - 0.5)


def effective_temperature(sigma_x_0: float, sigma_x_90: float, params: OscillatorParams) -> float:
    """Equipartition temperature from physical widths at theta = 0 and pi/2 (meters)."""
    if not (sigma_x_0 > 0 and sigma_x_90 > 0):
        raise ValueError("widths must be positive")
    return params.m_eff * params.omega_M ** 2 * sigma_x_0 * sigma_x_90 / params.k_B


def physical_width(variance: float, params: OscillatorParams) -> float:
    """Convert a quadrature variance to a displacement standard deviation (m)."""
    return math.sqrt(2.0) * params.x0 * math.sqrt(variance)
