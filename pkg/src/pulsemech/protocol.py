"""Pulse sequences: preparation, read-out, outcome transforms and sweeps.

A protocol applies up to two preparation pulses and one read-out pulse to
a mechanical state that is re-drawn from equilibrium for every repetition.
Repetitions are simulated in blocks; each block owns a random stream keyed
by its index so that the result does not depend on how many workers run.

Two reference calculations live next to the Monte Carlo engine:

* :func:`transformed_moments` propagates every Gaussian noise source
  linearly (Heisenberg picture) to the transformed read-out value.
* :func:`conditional_covariance` follows the Bayesian conditional
  covariance through the same sequence.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import math
from typing import Sequence

import numpy as np
from scipy import optimize

from . import rng as rng_mod
from .gaussian import (MechGaussianState, OscillatorParams, effective_temperature, evolve,
                       make_thermal_state, n_bar, physical_width, retherm)
from .pulse import (SHOT_VARIANCE, NoiseSpec, PulseSpec, chi, condition_exact, momentum_kick,
                    sample_outcome)
from .tomography import OpticalNoiseBudget, gaussian_fit, histogram_outcomes, subtract_optical_noise

QUARTER = math.pi / 2


@dataclass(frozen=True)
class InitialState:
    """Equilibrium state drawn at the start of every repetition.

    ``kind="driven"`` adds a coherent oscillation of quadrature amplitude
    ``amplitude`` with a uniformly random phase to the thermal state.
    """

    kind: str = "thermal"
    T: float = 1100.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("thermal", "driven"):
            raise ValueError(f"unknown initial state kind {self.kind!r}")
        if self.T < 0 or self.amplitude < 0:
            raise ValueError("temperature and amplitude must be non-negative")


@dataclass(frozen=True)
class ProtocolSpec:
    """One preparation/read-out sequence.

    ``prep_pulses`` holds ``(pulse, angle)`` pairs where ``angle`` is the
    free evolution before that pulse (ignored for the first one). The
    read-out follows the last preparation pulse after ``theta_r``.
    """

    oscillator: OscillatorParams
    readout_pulse: PulseSpec
    theta_r: float = 0.0
    prep_pulses: tuple[tuple[PulseSpec, float], ...] = ()
    repetitions: int = 300
    initial: InitialState = field(default_factory=InitialState)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rethermalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "prep_pulses", tuple((p, float(a)) for p, a in self.prep_pulses))
        if len(self.prep_pulses) > 2:
            raise ValueError("at most two preparation pulses are supported")
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ValueError("repetitions must be a positive integer")
        for a in [self.theta_r] + [a for _, a in self.prep_pulses]:
            if not 0 <= a < 2 * math.pi:
                raise ValueError(f"angles must lie in [0, 2 pi), got {a}")

    @property
    def pulses(self) -> list[PulseSpec]:
        return [p for p, _ in self.prep_pulses] + [self.readout_pulse]

    @property
    def angles(self) -> list[float]:
        """Evolution angle preceding each pulse (first entry is always 0)."""
        return [0.0] + [a for _, a in self.prep_pulses[1:]] + (
            [self.theta_r] if self.prep_pulses else [])

    @property
    def times(self) -> np.ndarray:
        return np.cumsum([self.oscillator.angle_to_time(a) for a in self.angles])

    @property
    def separations(self) -> np.ndarray:
        """|t_i - t_j| for every pulse pair, summed interval by interval.

        Summing intervals keeps a tiny separation distinct from zero, which
        differences of absolute times would round away.
        """
        dt = [self.oscillator.angle_to_time(a) for a in self.angles]
        n = len(dt)
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = math.fsum(dt[i + 1:j + 1])
        return out

    @property
    def chis(self) -> list[float]:
        return [chi(p, self.oscillator.x0) for p in self.pulses]

    def with_theta(self, theta_r: float) -> "ProtocolSpec":
        return replace(self, theta_r=float(theta_r))


def two_pulse_spec(oscillator: OscillatorParams, pulse: PulseSpec, theta_r: float = 0.0,
                   **kw) -> ProtocolSpec:
    """Position then momentum preparation a quarter period apart."""
    return ProtocolSpec(oscillator, pulse, theta_r, ((pulse, 0.0), (pulse, QUARTER)), **kw)


def transform_single(P_r, P_p1, theta, ratio: float = 1.0):
    """Remove the prepared mean from the read-out: ``P_r - ratio * P_p1 cos(theta)``.

    ``ratio`` is chi_r / chi_p1 and equals 1 for identical pulses.
    """
    return np.asarray(P_r) - ratio * np.asarray(P_p1) * math.cos(theta)


def transform_double(P_r, P_p1, P_p2, theta, ratios: tuple[float, float] = (1.0, 1.0)):
    """``P_r - P_p2 cos(theta) + P_p1 sin(theta)`` with theta counted from the second pulse.

    ``ratios`` are chi_r / chi_p1 and chi_r / chi_p2.
    """
    return (np.asarray(P_r) - ratios[1] * np.asarray(P_p2) * math.cos(theta)
            + ratios[0] * np.asarray(P_p1) * math.sin(theta))


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Outcomes of every repetition; nothing is discarded."""

    spec: ProtocolSpec
    seed: int
    key: tuple[int, ...]
    r: np.ndarray
    transformed: np.ndarray
    p1: np.ndarray | None = None
    p2: np.ndarray | None = None

    def __post_init__(self):
        n = self.spec.repetitions
        for arr in (self.r, self.transformed, self.p1, self.p2):
            if arr is not None and len(arr) != n:
                raise ValueError("record length differs from the number of repetitions")

    @property
    def theta_r(self) -> float:
        return self.spec.theta_r


def _transform(spec: ProtocolSpec, outcomes: list[np.ndarray]) -> np.ndarray:
    chis = spec.chis
    r = outcomes[-1]
    if len(outcomes) == 1:
        return r.copy()
    if len(outcomes) == 2:
        return transform_single(r, outcomes[0], spec.theta_r, chis[-1] / chis[0])
    return transform_double(r, outcomes[0], outcomes[1], spec.theta_r,
                            (chis[-1] / chis[0], chis[-1] / chis[1]))


def classical_offsets(spec: ProtocolSpec, size: int, gen: np.random.Generator) -> np.ndarray:
    """Correlated slow phase offsets, shape ``(size, n_pulses)``, in outcome units.

    Offsets within a repetition form a stationary Gaussian process with
    correlation exp(-|dt| / tau); pulses of different photon number differ
    only in variance.
    """
    pulses = spec.pulses
    v = np.array([spec.noise.classical_variance(p.N_tot) for p in pulses])
    if not np.any(v > 0):
        return np.zeros((size, len(pulses)))
    rho = spec.noise.correlation(spec.separations)
    cov = np.sqrt(np.outer(v, v)) * rho
    w, V = np.linalg.eigh(cov)
    L = V * np.sqrt(np.clip(w, 0, None))
    return gen.standard_normal((size, len(pulses))) @ L.T


def _initial_batch(spec: ProtocolSpec, size: int, gen: np.random.Generator) -> MechGaussianState:
    state = make_thermal_state(spec.initial.T, spec.oscillator, batch=size)
    if spec.initial.kind == "driven" and spec.initial.amplitude > 0:
        phase = gen.uniform(0.0, 2 * math.pi, size)
        mean = spec.initial.amplitude * np.column_stack([np.cos(phase), np.sin(phase)])
        state = state.replace(mean=mean)
    return state


def _free(state: MechGaussianState, theta: float, spec: ProtocolSpec) -> MechGaussianState:
    state = evolve(state, theta)
    if spec.rethermalize:
        state = retherm(state, spec.oscillator.angle_to_time(theta), spec.oscillator)
    return state


def _run_block(spec: ProtocolSpec, size: int, gen: np.random.Generator) -> list[np.ndarray]:
    # Draw order within a block: initial phases, classical offsets, then
    # shot and electronic noise pulse by pulse.
    state = _initial_batch(spec, size, gen)
    offsets = classical_offsets(spec, size, gen)
    x0 = spec.oscillator.x0
    values = []
    for k, (pulse, theta) in enumerate(zip(spec.pulses, spec.angles)):
        if k > 0:
            state = _free(state, theta, spec)
        c = chi(pulse, x0)
        out = sample_outcome(state, c, spec.noise, offsets[:, k], rng=gen, N_tot=pulse.N_tot)
        values.append(np.asarray(out.value))
        if k < len(spec.pulses) - 1:
            state = condition_exact(state, out, c, momentum_kick(pulse, x0))
    return values


def run_protocol(spec: ProtocolSpec, *, seed: int, key: Sequence[int] = (), block: int = 4096,
                 workers: int = 1) -> RunRecord:
    """Simulate ``spec.repetitions`` independent repetitions.

    Results depend only on ``seed``, ``key`` and ``block``; ``workers``
    changes the execution schedule, not the numbers.
    """
    key = tuple(int(k) for k in key)
    sizes = rng_mod.block_sizes(spec.repetitions, block)

    def job(i):
        return _run_block(spec, sizes[i], rng_mod.stream(seed, *key, i))

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(job, range(len(sizes))))
    else:
        blocks = [job(i) for i in range(len(sizes))]
    outcomes = [np.concatenate([b[k] for b in blocks]) for k in range(len(spec.pulses))]
    preps = outcomes[:-1]
    return RunRecord(
        spec=spec, seed=int(seed), key=key, r=outcomes[-1],
        transformed=_transform(spec, outcomes),
        p1=preps[0] if preps else None,
        p2=preps[1] if len(preps) > 1 else None,
    )


# ---------------------------------------------------------------------------
# Reference calculations


def _transform_weights(spec: ProtocolSpec) -> np.ndarray:
    chis = spec.chis
    n = len(chis)
    w = np.zeros(n)
    w[-1] = 1.0
    th = spec.theta_r
    if n == 2:
        w[0] = -chis[-1] / chis[0] * math.cos(th)
    elif n == 3:
        w[0] = chis[-1] / chis[0] * math.sin(th)
        w[1] = -chis[-1] / chis[1] * math.cos(th)
    return w


def transformed_moments(spec: ProtocolSpec, *, include_classical: bool = True) -> tuple[float, float]:
    """Exact mean and variance of the transformed read-out value.

    Each pulse outcome is written as a linear function of independent
    sources (initial quadratures, shot and back-action noise per pulse,
    bath noise per interval, electronic noise) plus the correlated classical
    offsets, and the quadratic form is evaluated directly. A driven
    initial state contributes its amplitude through the phase average.
    """
    osc = spec.oscillator
    pulses, angles = spec.pulses, spec.angles
    n = len(pulses)
    v_bath = n_bar(osc.T_bath, osc) + 0.5
    v0 = n_bar(spec.initial.T, osc) + 0.5
    if spec.initial.kind == "driven":
        v0 += spec.initial.amplitude ** 2 / 2

    variances = [v0, v0]
    # coeff[i] maps the source vector to (X_M, P_M); extended as sources appear.
    coeff = np.eye(2)
    mean = np.zeros(2)
    outcome_rows, outcome_mean = [], []

    def add_source(var):
        nonlocal coeff
        variances.append(var)
        coeff = np.hstack([coeff, np.zeros((2, 1))])
        return coeff.shape[1] - 1

    for k, (pulse, theta) in enumerate(zip(pulses, angles)):
        if k > 0:
            c, s = math.cos(theta), math.sin(theta)
            R = np.array([[c, s], [-s, c]])
            coeff, mean = R @ coeff, R @ mean
            if spec.rethermalize:
                relaxed = -math.expm1(-osc.gamma * osc.angle_to_time(theta))
                coeff, mean = coeff * math.sqrt(1 - relaxed), mean * math.sqrt(1 - relaxed)
                for row in (0, 1):
                    j = add_source(relaxed * v_bath)
                    coeff[row, j] = 1.0
        ck = chi(pulse, osc.x0)
        j_shot = add_source(SHOT_VARIANCE)
        j_el = add_source(spec.noise.electronic_variance_pl(pulse.N_tot)
                          if spec.noise.electronic_variance > 0 else 0.0)
        row = ck * coeff[0].copy()
        row[j_shot] += 1.0
        row[j_el] += 1.0
        outcome_rows.append(row)
        outcome_mean.append(ck * mean[0])
        j_ba = add_source(SHOT_VARIANCE)
        coeff[1, j_ba] += ck
        mean[1] += momentum_kick(pulse, osc.x0)

    m = coeff.shape[1]
    rows = np.array([np.pad(r, (0, m - r.size)) for r in outcome_rows])
    w = _transform_weights(spec)
    c = w @ rows
    var = float(np.sum(c ** 2 * np.array(variances)))
    if include_classical:
        v = np.array([spec.noise.classical_variance(p.N_tot) for p in pulses])
        cov = np.sqrt(np.outer(v, v)) * spec.noise.correlation(spec.separations)
        var += float(w @ cov @ w)
    return float(w @ np.array(outcome_mean)), var


def conditional_covariance(spec: ProtocolSpec) -> np.ndarray:
    """Covariance of the Bayesian conditional state just before the read-out."""
    osc = spec.oscillator
    state = make_thermal_state(spec.initial.T, osc)
    for k, (pulse, theta) in enumerate(zip(spec.pulses[:-1], spec.angles[:-1])):
        if k > 0:
            state = _free(state, theta, spec)
        state = condition_exact(state, 0.0, chi(pulse, osc.x0), momentum_kick(pulse, osc.x0))
    return np.array(_free(state, spec.angles[-1], spec).cov)


# ---------------------------------------------------------------------------
# Analysis helpers


def readout_budget(spec: ProtocolSpec, *, subtract_classical: bool = False) -> OpticalNoiseBudget:
    """Optical noise of the read-out pulse alone, in outcome units.

    Classical phase noise is excluded by default: it is correlated between
    pulses, so its share of a transformed outcome depends on the pulse
    separation and is not a fixed per-pulse floor. What remains of it after
    the transform shows up as excess mechanical width.
    """
    p = spec.readout_pulse
    return OpticalNoiseBudget(
        shot=SHOT_VARIANCE,
        classical=spec.noise.classical_variance(p.N_tot) if subtract_classical else 0.0,
        electronic=spec.noise.electronic_variance_pl(p.N_tot) if spec.noise.electronic_variance else 0.0,
    )


@dataclass(frozen=True)
class WidthRow:
    theta: float
    sigma_x: float
    sigma_x_err: float
    var_X: float
    flagged: bool
    outcome_variance: float
    outcome_variance_err: float


def width_from_variance(var_pl: float, var_pl_err: float, spec: ProtocolSpec, theta: float,
                        *, subtract_classical: bool = False) -> WidthRow:
    """Turn an outcome variance into a displacement width (m), subtracting optical noise."""
    c = spec.chis[-1]
    mv = subtract_optical_noise(var_pl, readout_budget(spec, subtract_classical=subtract_classical), c)
    sigma = physical_width(mv.value, spec.oscillator)
    # d sigma / d var_pl = sigma / (2 (var_pl - budget))
    err = sigma * var_pl_err / (2 * mv.value * c ** 2) if mv.value > 0 else math.inf
    return WidthRow(float(theta), sigma, err, mv.value, mv.upper_bound, var_pl, var_pl_err)


def width_vs_theta(spec: ProtocolSpec, thetas: Sequence[float], *, seed: int, bins: int = 32,
                   subtract_classical: bool = False, workers: int = 1) -> list[WidthRow]:
    """Fitted marginal width of the transformed outcomes at each read-out angle."""
    if len(thetas) == 0:
        raise ValueError("need at least one angle")
    rows = []
    for i, th in enumerate(thetas):
        rec = run_protocol(spec.with_theta(th), seed=seed, key=(i,), workers=workers)
        fit = gaussian_fit(histogram_outcomes(rec.transformed, bins=bins))
        rows.append(width_from_variance(fit.variance, fit.variance_err, spec, th,
                                        subtract_classical=subtract_classical))
    return rows


@dataclass(frozen=True)
class StrengthRow:
    N: float
    sqrt_N: float
    chi: float
    fitted_sigma_x: float
    fitted_sigma_x_err: float
    inferred_sigma_x: float
    posterior_sigma_x: float


def width_vs_strength(spec: ProtocolSpec, Ns: Sequence[float], *, seed: int, theta: float = math.radians(5),
                      bins: int = 32, workers: int = 1) -> list[StrengthRow]:
    """Conditional width against pulse photon number with one preparation pulse.

    Preparation and read-out share the photon number ``N``. Columns:

    ``fitted_sigma_x``
        width of the transformed outcomes at ``theta`` after optical-noise
        subtraction (includes evolution of the momentum spread);
    ``inferred_sigma_x``
        immediate post-preparation width x0 / chi, i.e. the large-occupation
        conditional variance 1 / (2 chi^2);
    ``posterior_sigma_x``
        exact Bayesian posterior width for the configured initial state.
    """
    rows = []
    osc = spec.oscillator
    for i, N in enumerate(Ns):
        if not N > 0:
            raise ValueError("photon numbers must be positive")
        pulse = replace(spec.readout_pulse, N_signal=float(N))
        s = replace(spec, readout_pulse=pulse, prep_pulses=((pulse, 0.0),), theta_r=float(theta))
        rec = run_protocol(s, seed=seed, key=(i,), workers=workers)
        fit = gaussian_fit(histogram_outcomes(rec.transformed, bins=bins))
        w = width_from_variance(fit.variance, fit.variance_err, s, theta)
        c = chi(pulse, osc.x0)
        prior = make_thermal_state(s.initial.T, osc)
        post = condition_exact(prior, 0.0, c, 0.0)
        rows.append(StrengthRow(
            N=float(N), sqrt_N=math.sqrt(N), chi=c,
            fitted_sigma_x=w.sigma_x, fitted_sigma_x_err=w.sigma_x_err,
            inferred_sigma_x=physical_width(1.0 / (2 * c ** 2), osc),
            posterior_sigma_x=physical_width(post.var_x, osc),
        ))
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("need at least two positive points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _temperature_from_variances(var0: float, var90: float, spec: ProtocolSpec,
                                subtract_classical: bool) -> float:
    budget = readout_budget(spec, subtract_classical=subtract_classical)
    c = spec.chis[-1]
    m0 = subtract_optical_noise(var0, budget, c)
    m90 = subtract_optical_noise(var90, budget, c)
    if m0.upper_bound or m90.upper_bound:
        return 0.0
    osc = spec.oscillator
    return effective_temperature(physical_width(m0.value, osc), physical_width(m90.value, osc), osc)


def oracle_temperature(spec: ProtocolSpec, *, subtract_classical: bool = False) -> float:
    """T_eff implied by the exact transformed variances at read-out angles 0 and pi/2."""
    v0 = transformed_moments(spec.with_theta(0.0))[1]
    v90 = transformed_moments(spec.with_theta(QUARTER))[1]
    return _temperature_from_variances(v0, v90, spec, subtract_classical)


def measured_temperature(spec: ProtocolSpec, *, seed: int, subtract_classical: bool = False,
                         workers: int = 1) -> float:
    """Monte Carlo T_eff from sample variances of transformed outcomes at 0 and pi/2."""
    var = []
    for i, th in enumerate((0.0, QUARTER)):
        rec = run_protocol(spec.with_theta(th), seed=seed, key=(i,), workers=workers)
        var.append(float(np.var(rec.transformed, ddof=1)))
    return _temperature_from_variances(var[0], var[1], spec, subtract_classical)


def fit_classical_corr_time(spec: ProtocolSpec, target_T: float = 16.0, *,
                            bounds: tuple[float, float] = (1e-6, 10.0),
                            subtract_classical: bool = False) -> float:
    """Correlation time of the classical phase process that yields ``target_T``.

    Solved on the exact variance model; the classical amplitude is taken
    from ``spec.noise``.
    """
    if spec.noise.classical_phase_coeff <= 0:
        raise ValueError("classical phase noise must be configured")

    def resid(log_tau):
        s = replace(spec, noise=replace(spec.noise, classical_corr_time=math.exp(log_tau)))
        return oracle_temperature(s, subtract_classical=subtract_classical) - target_T

    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    if resid(lo) * resid(hi) > 0:
        raise ValueError(f"target {target_T} K is not bracketed by correlation times {bounds}")
    return math.exp(optimize.brentq(resid, lo, hi, xtol=1e-10))
