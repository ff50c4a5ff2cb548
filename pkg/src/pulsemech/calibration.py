"""Two-step calibration: piezo half-wave drive, then outcome per meter.

Step one drives a mirror piezo sinusoidally and watches the homodyne fringe
cos(phi0 + beta sin(omega t)). At beta = pi the fringe levels at the two
drive turning points coincide whatever phi0 is, which fixes the drive
voltage for a half-wavelength peak-to-peak scan. Step two scans the mirror
with a small amplitude and fits outcomes against displacement.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np
from scipy import optimize, signal

from .errors import ExtremaError, NonlinearityError

COINCIDENCE_TOL = 0.005


def simulate_piezo_fringe(phi0, beta: float, omega: float, duration: float, fs: float) -> np.ndarray:
    """Homodyne fringe ``cos(phi0 + beta sin(omega t))`` sampled at ``fs``.

    ``phi0`` is a constant or an array with one value per sample.
    """
    if not fs > 10 * omega / (2 * math.pi):
        raise ValueError("sample rate must exceed ten times the drive frequency")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    phi0 = np.broadcast_to(np.asarray(phi0, dtype=float), t.shape)
    return np.cos(phi0 + beta * np.sin(omega * t))


def phase_drift(n: int, fs: float, *, rate_rms: float, corner_hz: float,
                gen: np.random.Generator) -> np.ndarray:
    """Random walk whose increments are low-passed below ``corner_hz``.

    ``rate_rms`` is the RMS drift rate in rad/s.
    """
    sos = signal.butter(2, corner_hz, fs=fs, output="sos")
    steps = signal.sosfilt(sos, gen.standard_normal(n))
    sd = steps.std()
    if sd > 0:
        steps *= rate_rms / (sd * fs)
    return np.cumsum(steps)


@dataclass(frozen=True)
class HalfWaveReport:
    is_coincident: bool
    mismatch: float
    signed_mismatch: float
    per_period: np.ndarray


def _turning_level(trace: np.ndarray, centre: float, half: int) -> float:
    i = int(round(centre))
    idx = np.arange(i - half, i + half + 1)
    coeff = np.polyfit((idx - centre) / half, trace[idx], 6)
    return float(coeff[-1])


def detect_half_wave_condition(trace, fs: float, drive_omega: float, *, tol: float = COINCIDENCE_TOL,
                               window: float = 0.05) -> HalfWaveReport:
    """Compare fringe levels at the drive maximum and minimum of each period.

    The drive is taken as ``sin(drive_omega t)`` with t = 0 at the first
    sample. Each level is the value at the turning point of a degree-6
    polynomial fitted within ``window`` periods, which averages detector
    noise. Each drive maximum is compared with the mean of the two
    neighbouring minima, which cancels a linear drift of phi0. The
    difference is divided by the fringe amplitude over that period (half
    its peak-to-peak excursion) and the decision uses the median absolute
    mismatch over periods. Drift rates up to about 20 rad/s keep the
    mismatch of a true half-wave drive near 1e-3.

    A constant phi0 at a multiple of pi hides any mismatch; a drifting phi0
    removes that blind spot.
    """
    trace = np.asarray(trace, dtype=float)
    period = 2 * math.pi / drive_omega * fs
    half = max(int(window * period), 2)
    n_periods = int(trace.size / period)
    if n_periods < 3:
        raise ExtremaError(f"trace covers {n_periods} usable drive periods, need 3",
                           details={"samples": trace.size, "period_samples": period})
    diffs = []
    for k in range(n_periods):
        t_max = (k + 0.25) * period
        before, after = t_max - period / 2, t_max + period / 2
        if before - half < 0 or after + half >= trace.size:
            continue
        seg = trace[int(before):int(after) + 1]
        amp = 0.5 * (seg.max() - seg.min())
        if amp <= 0:
            continue
        low = 0.5 * (_turning_level(trace, before, half) + _turning_level(trace, after, half))
        diffs.append((_turning_level(trace, t_max, half) - low) / amp)
    if len(diffs) < 3:
        raise ExtremaError("fewer than three periods with a visible fringe")
    diffs = np.array(diffs)
    mismatch = float(np.median(np.abs(diffs)))
    return HalfWaveReport(mismatch < tol, mismatch, float(np.median(diffs)), diffs)


@dataclass(frozen=True)
class PiezoCalibration:
    vpp_half_wave: float
    volts_to_meters: float


def calibrate_piezo(trace_for_vpp: Callable[[float], np.ndarray], fs: float, drive_omega: float,
                    vpp_bracket: tuple[float, float], wavelength: float = 1064e-9) -> PiezoCalibration:
    """Find the drive voltage at which the fringe turning points coincide.

    ``trace_for_vpp`` returns a fringe trace for a peak-to-peak drive
    voltage. The signed mismatch changes sign at beta = pi, where the
    mirror moves lambda / 2 peak to peak.
    """
    def f(v):
        return detect_half_wave_condition(trace_for_vpp(v), fs, drive_omega).signed_mismatch

    lo, hi = vpp_bracket
    if f(lo) * f(hi) > 0:
        raise ValueError("the half-wave drive is not bracketed")
    v = optimize.brentq(f, lo, hi, xtol=1e-9 * hi)
    return PiezoCalibration(float(v), wavelength / 2 / v)


def synthetic_scan_outcomes(x, N: float, wavelength: float, gen: np.random.Generator) -> np.ndarray:
    """Shot-noise-limited outcomes from a rigid mirror at displacements ``x``.

    P_L = sqrt(N / 2) sin(4 pi x / lambda) plus shot noise of variance 1/2,
    whose small-signal slope is chi / (sqrt(2) x0).
    """
    x = np.asarray(x, dtype=float)
    return math.sqrt(N / 2) * np.sin(4 * math.pi * x / wavelength) + math.sqrt(0.5) * gen.standard_normal(x.shape)


def expected_slope(N: float, wavelength: float) -> float:
    return math.sqrt(N / 2) * 4 * math.pi / wavelength


@dataclass(frozen=True)
class OutcomeCalibration:
    slope: float
    slope_err: float
    intercept: float
    n_points: int


def calibrate_outcome_per_meter(volts, volts_to_meters: float, outcomes, outcome_err=None, *,
                                significance: float = 4.0, max_deviation: float = 0.005) -> OutcomeCalibration:
    """Weighted straight-line fit of outcomes against piezo displacement.

    A cubic is fitted as well. If its quadratic or cubic term is both
    significant (beyond ``significance`` standard errors) and large
    (bending the curve by more than ``max_deviation`` of the linear span
    over the scan), the scan is outside the small-signal regime and
    :class:`NonlinearityError` is raised.
    """
    x = np.asarray(volts, dtype=float) * volts_to_meters
    y = np.asarray(outcomes, dtype=float)
    if x.size < 10 or x.size != y.size:
        raise ValueError("need at least ten matching points")
    if outcome_err is None:
        err = np.full(x.size, math.sqrt(0.5))
    else:
        err = np.broadcast_to(np.asarray(outcome_err, dtype=float), x.shape)
    w = 1.0 / err
    xc = x - x.mean()
    span = float(np.ptp(xc))
    if span == 0:
        raise ValueError("scan has no displacement range")
    u = xc / span

    def fit(deg):
        A = np.vander(u, deg + 1)
        c, *_ = np.linalg.lstsq(A * w[:, None], y * w, rcond=None)
        cov = np.linalg.inv((A * w[:, None]).T @ (A * w[:, None]))
        return c, cov

    c3, cov3 = fit(3)
    lin_span = abs(c3[2])
    for power, idx in ((3, 0), (2, 1)):
        z = abs(c3[idx]) / math.sqrt(cov3[idx, idx])
        bend = abs(c3[idx]) * float(np.max(np.abs(u) ** power))
        if z > significance and bend > max_deviation * lin_span:
            raise NonlinearityError(
                "scan is not in the small-signal regime; reduce the piezo amplitude",
                details={"power": power, "z": z, "relative_bend": bend / lin_span},
            )
    c1, cov1 = fit(1)
    return OutcomeCalibration(float(c1[0] / span), float(math.sqrt(cov1[0, 0]) / span),
                              float(c1[1] - c1[0] * x.mean() / span), int(x.size))
