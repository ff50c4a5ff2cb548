"""Quantum-noise-limit checks on pulse pairs reflected from a rigid mirror.

Everything here is in absolute homodyne units: a single pulse with ``N_tot``
photons in total has shot-noise variance ``N_tot``, classical phase noise
contributes ``c * N_tot**2`` and the detector adds a constant. The
conditional variance of a pair is the variance of the difference of the two
outcomes, so slow common-mode noise cancels.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np
from scipy import stats

from . import rng as rng_mod
from .errors import FitError, RegimeError
from .pulse import NoiseSpec
from .tomography import gaussian_fit, histogram_outcomes

USABLE_N_TOT = 1e10


def conditional_variance_pair(p1, p2) -> float:
    """Sample variance of ``p2 - p1``."""
    d = np.asarray(p2, dtype=float) - np.asarray(p1, dtype=float)
    if d.size < 2:
        raise ValueError("need at least two pairs")
    return float(np.var(d, ddof=1))


def model_components(N_tot: float, noise: NoiseSpec, separation: float) -> dict[str, float]:
    """Expected pair-difference variance split by source."""
    rho = float(noise.correlation(separation))
    return {
        "quantum": 2.0 * N_tot,
        "classical": 2.0 * noise.classical_phase_coeff * N_tot ** 2 * (1.0 - rho),
        "electronic": 2.0 * noise.electronic_variance,
    }


def model_variance(N_tot: float, noise: NoiseSpec, separation: float) -> float:
    return sum(model_components(N_tot, noise, separation).values())


def simulate_pairs(N_tot: float, noise: NoiseSpec, separation: float, n_pairs: int,
                   gen: np.random.Generator, *, light: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Outcomes of ``n_pairs`` pulse pairs ``separation`` seconds apart.

    With ``light=False`` only detector noise is recorded.
    """
    shape = (n_pairs, 2)
    out = np.zeros(shape)
    if light:
        out += math.sqrt(N_tot) * gen.standard_normal(shape)
        v_cl = noise.classical_phase_coeff * N_tot ** 2
        if v_cl > 0:
            rho = float(noise.correlation(separation))
            z = gen.standard_normal(shape)
            common = z[:, 0]
            second = rho * common + math.sqrt(max(1.0 - rho ** 2, 0.0)) * z[:, 1]
            out += math.sqrt(v_cl) * np.column_stack([common, second])
    if noise.electronic_variance > 0:
        out += math.sqrt(noise.electronic_variance) * gen.standard_normal(shape)
    return out[:, 0], out[:, 1]


@dataclass(frozen=True)
class ScanPoint:
    N_tot: float
    variance: float
    variance_err: float
    n_pairs: int


def scan_total_photons(N_tots: Sequence[float], noise: NoiseSpec, separation: float, *, seed: int,
                       pairs: int = 300, bins: int = 24, ceiling: float = USABLE_N_TOT) -> list[ScanPoint]:
    """Conditional pair variance at each total photon number.

    The variance and its one-sigma error come from a Gaussian fit to the
    histogram of pair differences. Points above ``ceiling`` are rejected:
    the phase lock is not usable there.
    """
    points = []
    for i, N in enumerate(N_tots):
        if not N > 0:
            raise ValueError("photon numbers must be positive")
        if N > ceiling:
            raise RegimeError(f"N_tot = {N:.3g} exceeds the usable ceiling {ceiling:.3g}",
                              code="phase-lock", details={"N_tot": N, "ceiling": ceiling})
        p1, p2 = simulate_pairs(N, noise, separation, pairs, rng_mod.stream(seed, i))
        fit = gaussian_fit(histogram_outcomes(p2 - p1, bins=bins))
        points.append(ScanPoint(float(N), fit.variance, fit.variance_err, pairs))
    return points


@dataclass(frozen=True)
class PolyFit:
    coeffs: np.ndarray  # highest power first, as numpy.polyval expects
    cov: np.ndarray
    r2: float
    chi2: float
    dof: int

    @property
    def slope(self) -> float:
        return float(self.coeffs[-2])

    @property
    def intercept(self) -> float:
        return float(self.coeffs[-1])

    @property
    def aic(self) -> float:
        return self.chi2 + 2 * self.coeffs.size


def weighted_polyfit(x, y, yerr, degree: int) -> PolyFit:
    """Weighted least squares with a weighted coefficient of determination.

    R^2 = 1 - sum w (y - f)^2 / sum w (y - ybar_w)^2 with w = 1 / yerr^2.
    """
    x, y, yerr = (np.asarray(a, dtype=float) for a in (x, y, yerr))
    if x.size < degree + 2:
        raise FitError(f"need at least {degree + 2} points", code="singular-design")
    if np.any(yerr <= 0) or not np.all(np.isfinite(yerr)):
        raise FitError("uncertainties must be positive and finite", code="bad-errors")
    scale = np.max(np.abs(x))
    u = x / scale if scale > 0 else x
    A = np.vander(u, degree + 1)
    w = 1.0 / yerr
    Aw = A * w[:, None]
    if np.linalg.matrix_rank(Aw) < degree + 1:
        raise FitError("design matrix is singular", code="singular-design")
    coeffs_u, *_ = np.linalg.lstsq(Aw, y * w, rcond=None)
    cov_u = np.linalg.inv(Aw.T @ Aw)
    powers = np.arange(degree, -1, -1)
    conv = scale ** -powers
    coeffs = coeffs_u * conv
    cov = cov_u * np.outer(conv, conv)
    resid = y - A @ coeffs_u
    wt = w ** 2
    ybar = np.sum(wt * y) / np.sum(wt)
    ss_tot = float(np.sum(wt * (y - ybar) ** 2))
    chi2 = float(np.sum(wt * resid ** 2))
    r2 = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return PolyFit(coeffs, cov, r2, chi2, x.size - degree - 1)


def fit_linear_r2(points: Sequence[ScanPoint]) -> PolyFit:
    x = [p.N_tot for p in points]
    return weighted_polyfit(x, [p.variance for p in points], [p.variance_err for p in points], 1)


@dataclass(frozen=True)
class ModelComparison:
    linear: PolyFit
    quadratic: PolyFit
    alpha: float = 2.7e-3

    @property
    def delta_chi2(self) -> float:
        return self.linear.chi2 - self.quadratic.chi2

    @property
    def pvalue(self) -> float:
        """Likelihood-ratio p-value of the extra quadratic term (one degree of freedom)."""
        return float(stats.chi2.sf(max(self.delta_chi2, 0.0), 1))

    @property
    def preferred(self) -> str:
        """``quadratic`` when the extra term is significant at ``alpha`` (3 sigma by default)."""
        return "quadratic" if self.pvalue < self.alpha else "linear"


def compare_models(points: Sequence[ScanPoint]) -> ModelComparison:
    x = [p.N_tot for p in points]
    y = [p.variance for p in points]
    e = [p.variance_err for p in points]
    return ModelComparison(weighted_polyfit(x, y, e, 1), weighted_polyfit(x, y, e, 2))


def electronic_variance_for_db(db_below: float, N_tot: float) -> float:
    """Detector variance that sits ``db_below`` dB under the observed noise at ``N_tot``.

    The observed noise includes the detector itself: v / (N_tot + v) = 10^(-dB/10).
    """
    r = 10 ** (-db_below / 10)
    return r * N_tot / (1 - r)


def measure_electronic_db(noise: NoiseSpec, N_tot: float, separation: float, *, seed: int,
                          pairs: int = 100_000) -> tuple[float, float]:
    """Dark-to-light ratio of pair variances in dB, with its one-sigma error."""
    gen = rng_mod.stream(seed, 0)
    light = conditional_variance_pair(*simulate_pairs(N_tot, noise, separation, pairs, gen))
    gen = rng_mod.stream(seed, 1)
    dark = conditional_variance_pair(*simulate_pairs(N_tot, noise, separation, pairs, gen, light=False))
    db = 10 * math.log10(light / dark)
    err = 10 / math.log(10) * math.sqrt(4.0 / (pairs - 1))
    return db, err
