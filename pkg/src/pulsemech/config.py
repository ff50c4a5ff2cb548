"""Scenario files: schema, loading and conversion to simulation objects.

Scenarios are YAML (JSON is valid YAML too). Quantities carry their unit in
the field name (``_hz``, ``_kg``, ``_k``, ``_m``, ``_s``, ``_deg``, ``_rad``);
photon numbers and quadrature amplitudes are plain numbers.
"""
from __future__ import annotations

from importlib import resources
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
import yaml

from .gaussian import OscillatorParams
from .noise import electronic_variance_for_db
from .protocol import InitialState, ProtocolSpec
from .pulse import NoiseSpec, PulseSpec


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OscillatorConfig(_Model):
    frequency_hz: float = Field(984.3, gt=0)
    m_eff_kg: float = Field(260e-12, gt=0)
    quality_factor: float = Field(3.1e4, gt=0)
    T_bath_k: float = Field(1100.0, ge=0)

    def build(self) -> OscillatorParams:
        return OscillatorParams.from_frequency(self.frequency_hz, self.m_eff_kg,
                                               Q=self.quality_factor, T_bath=self.T_bath_k)


class PulseConfig(_Model):
    N_signal: float = Field(1e7, ge=0)
    N_LO: float = Field(1e10, ge=0)
    wavelength_m: float = Field(1064e-9, gt=0)
    duration_s: float = Field(1e-6, gt=0)

    def build(self, N_signal: float | None = None) -> PulseSpec:
        return PulseSpec(self.N_signal if N_signal is None else N_signal, self.N_LO,
                         self.wavelength_m, self.duration_s)


class NoiseConfig(_Model):
    classical_phase_coeff: float = Field(0.0, ge=0)
    classical_corr_time_s: float = Field(math.inf, ge=0)
    electronic_variance: float = Field(0.0, ge=0)
    electronic_db_below: Optional[float] = Field(None, gt=0)
    electronic_reference_N_tot: float = Field(9.5e9, gt=0)

    @model_validator(mode="after")
    def _one_electronic_spec(self):
        if self.electronic_db_below is not None and self.electronic_variance > 0:
            raise ValueError("give electronic_variance or electronic_db_below, not both")
        return self

    def build(self, seed: int = 0) -> NoiseSpec:
        v_el = self.electronic_variance
        if self.electronic_db_below is not None:
            v_el = electronic_variance_for_db(self.electronic_db_below, self.electronic_reference_N_tot)
        return NoiseSpec(self.classical_phase_coeff, self.classical_corr_time_s, v_el, seed)


class InitialConfig(_Model):
    kind: Literal["thermal", "driven"] = "thermal"
    T_k: float = Field(1100.0, ge=0)
    amplitude: float = Field(0.0, ge=0)


class SweepConfig(_Model):
    kind: Literal["theta", "strength"]
    N_values: list[float] = Field(default_factory=list)
    theta_deg: float = 5.0

    @field_validator("N_values")
    @classmethod
    def _positive(cls, v):
        if any(not n > 0 for n in v):
            raise ValueError("photon numbers must be positive")
        return v


class ProtocolConfig(_Model):
    prep_pulses: int = Field(0, ge=0, le=2)
    prep_separation_deg: float = Field(90.0, ge=0, lt=360)
    prep_N_signal: Optional[float] = Field(None, ge=0)
    angles_deg: list[float] = Field(default_factory=lambda: [5.0 + 10 * k for k in range(9)])
    repetitions: int = Field(300, ge=1)
    initial: InitialConfig = InitialConfig()
    rethermalize: bool = True
    sweep: Optional[SweepConfig] = None

    @field_validator("angles_deg")
    @classmethod
    def _angles(cls, v):
        if not v:
            raise ValueError("at least one read-out angle is required")
        if any(not 0 <= a < 360 for a in v):
            raise ValueError("angles must lie in [0, 360)")
        return v


class TomographyConfig(_Model):
    bins: int = Field(64, ge=5)
    grid: int = Field(128, ge=8)
    apodization: float = Field(1.0, ge=0, le=1)
    cutoff: float = Field(1.0, gt=0, le=1)
    fit_bins: int = Field(32, ge=5)


class NoiseScanConfig(_Model):
    N_tot_values: list[float] = Field(min_length=3)
    signal_fraction: float = Field(1e-3, gt=0, lt=1)
    pairs: int = Field(3000, ge=2)
    separation_s: float = Field(14.1e-6, ge=0)
    bins: int = Field(24, ge=5)
    ceiling_N_tot: float = Field(1e10, gt=0)
    electronic_check_N_tot: Optional[float] = Field(None, gt=0)
    electronic_check_pairs: int = Field(100_000, ge=2)


class CantileverConfig(_Model):
    total_length_m: float = Field(1.45e-3, gt=0)
    arm_width_m: float = Field(4.125e-6, gt=0)
    head_diameter_m: float = Field(98.25e-6, gt=0)
    thickness_m: float = Field(6.88e-6, gt=0)
    density_kg_m3: float = Field(4476.0, gt=0)
    head: Literal["circle", "square"] = "circle"
    cells_across_arm: int = Field(8, ge=1)
    dx_m: float = Field(2e-6, gt=0)
    nz: int = Field(4, ge=1)


class MeffConfig(_Model):
    grid_file: Optional[str] = None
    cantilever: Optional[CantileverConfig] = None
    beam_diameter_m: float = Field(10.6e-6, gt=0)
    beam_center_m: tuple[float, float] = (0.0, 0.0)
    modes: list[tuple[float, float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.grid_file is None) == (self.cantilever is None):
            raise ValueError("give exactly one of grid_file or cantilever")
        return self


class CalibrateConfig(_Model):
    drive_hz: float = Field(1.06e3, gt=0)
    sample_rate_hz: float = Field(1e6, gt=0)
    duration_s: float = Field(0.01, gt=0)
    piezo_rad_per_v: float = Field(math.pi / 2.3, gt=0)
    vpp_bracket: tuple[float, float] = (3.0, 6.0)
    test_vpp: Optional[float] = Field(None, gt=0)
    phi0_rad: float = 0.8
    drift_rate_rad_s: float = Field(0.0, ge=0)
    drift_corner_hz: float = Field(200.0, gt=0)
    snr_db: Optional[float] = None
    scan_vpp: float = Field(0.04, gt=0)
    scan_points: int = Field(300, ge=10)
    scan_N_signal: float = Field(1e7, gt=0)


class OutputConfig(_Model):
    dir: str = "out"
    format: Literal["csv", "json"] = "csv"


class Scenario(_Model):
    name: str = "scenario"
    seed: int = Field(ge=0)
    workers: int = Field(1, ge=1)
    oscillator: OscillatorConfig = OscillatorConfig()
    pulse: PulseConfig = PulseConfig()
    noise: NoiseConfig = NoiseConfig()
    protocol: Optional[ProtocolConfig] = None
    tomography: TomographyConfig = TomographyConfig()
    noise_scan: Optional[NoiseScanConfig] = None
    meff: Optional[MeffConfig] = None
    calibrate: Optional[CalibrateConfig] = None
    output: OutputConfig = OutputConfig()

    def protocol_spec(self, theta_deg: float = 0.0) -> ProtocolSpec:
        if self.protocol is None:
            raise ValueError("scenario has no protocol section")
        p = self.protocol
        readout = self.pulse.build()
        prep = self.pulse.build(p.prep_N_signal)
        preps = []
        if p.prep_pulses >= 1:
            preps.append((prep, 0.0))
        if p.prep_pulses == 2:
            preps.append((prep, math.radians(p.prep_separation_deg)))
        return ProtocolSpec(
            oscillator=self.oscillator.build(),
            readout_pulse=readout,
            theta_r=math.radians(theta_deg) % (2 * math.pi),
            prep_pulses=tuple(preps),
            repetitions=p.repetitions,
            initial=InitialState(p.initial.kind, p.initial.T_k, p.initial.amplitude),
            noise=self.noise.build(self.seed),
            rethermalize=p.rethermalize,
        )


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file. Raises pydantic.ValidationError."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario must be a mapping")
    return Scenario.model_validate(data)


def bundled_scenarios() -> dict[str, Path]:
    """Scenario files shipped with the package, by name."""
    root = resources.files("pulsemech") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".yaml")}


def resolve_config(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if name_or_path in bundled:
        return bundled[name_or_path]
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")
