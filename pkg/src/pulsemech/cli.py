"""Command-line front end: ``pulsemech {run,tomo,noise-scan,meff,calibrate}``.

Exit status: 0 success, 2 invalid configuration or missing input,
3 physics or data fault raised by the simulation.
"""
from __future__ import annotations

import argparse
import math
from pathlib import Path
import sys
import traceback

import numpy as np
from pydantic import ValidationError

from . import calibration, modal, noise, protocol, tomography
from . import io as pio
from . import rng as rng_mod
from .config import Scenario, load_scenario, resolve_config
from .errors import FitError, PulseMechError
from .gaussian import effective_temperature, physical_width
from .pulse import chi, momentum_kick

EXIT_CONFIG = 2
EXIT_FAULT = 3


class ConfigError(Exception):
    pass


def _meta(scenario: Scenario, command: str, **extra) -> dict:
    meta = {"command": command, "seed": scenario.seed, "config": scenario.model_dump(mode="python")}
    meta.update(extra)
    return meta


def _workers(args, scenario: Scenario) -> int:
    return 1 if args.deterministic else scenario.workers


def _require(scenario: Scenario, section: str):
    value = getattr(scenario, section)
    if value is None:
        raise ConfigError(f"config error at {section}: section is required for this command")
    return value


# ---------------------------------------------------------------------------
# run


def _reconstruct(ms: tomography.MarginalSet, tcfg) -> tomography.PhaseSpaceMap:
    return tomography.inverse_radon(tomography.symmetrize(ms), tcfg.grid,
                                    apodization=tcfg.apodization, cutoff=tcfg.cutoff)


def _outcome_variance(samples: np.ndarray, bins: int) -> tuple[float, float, bool]:
    """Gaussian-fit variance, or the sample variance when the marginal is not Gaussian.

    Driven states give ring-shaped distributions whose marginals fail the
    fit; their second moment is still a meaningful width.
    """
    try:
        fit = tomography.gaussian_fit(tomography.histogram_outcomes(samples, bins=bins))
        return fit.variance, fit.variance_err, True
    except FitError:
        var = float(np.var(samples, ddof=1))
        return var, var * math.sqrt(2.0 / (samples.size - 1)), False


def cmd_run(args, scenario: Scenario, out: Path) -> dict:
    pcfg = _require(scenario, "protocol")
    workers = _workers(args, scenario)
    base = scenario.protocol_spec()
    osc = base.oscillator
    meta = _meta(scenario, "run")
    summary = {"chi": base.chis[-1], "Omega": momentum_kick(base.readout_pulse, osc.x0),
               "x0_m": osc.x0}

    if pcfg.sweep is not None and pcfg.sweep.kind == "strength":
        rows = protocol.width_vs_strength(base, pcfg.sweep.N_values, seed=scenario.seed,
                                          theta=math.radians(pcfg.sweep.theta_deg),
                                          bins=scenario.tomography.fit_bins, workers=workers)
        cols = {k: np.array([getattr(r, k) for r in rows]) for k in rows[0].__dataclass_fields__}
        pio.write_table(out / "width_vs_strength", cols, meta, args.format)
        summary["loglog_slope_inferred"] = protocol.loglog_slope(cols["N"], cols["inferred_sigma_x"])
        summary["loglog_slope_fitted"] = protocol.loglog_slope(cols["N"], cols["fitted_sigma_x"])
        return summary

    thetas = [math.radians(a) for a in pcfg.angles_deg]
    records, widths, gauss_ok = [], [], []
    for i, th in enumerate(thetas):
        spec = base.with_theta(th)
        rec = protocol.run_protocol(spec, seed=scenario.seed, key=(i,), workers=workers)
        var, err, ok = _outcome_variance(rec.transformed, scenario.tomography.fit_bins)
        records.append(rec)
        widths.append(protocol.width_from_variance(var, err, spec, th))
        gauss_ok.append(ok)

    n = base.repetitions
    nan = np.full(n, np.nan)
    runs = {
        "theta_deg": np.repeat(pcfg.angles_deg, n).astype(float),
        "rep": np.tile(np.arange(n), len(records)),
        "p1": np.concatenate([r.p1 if r.p1 is not None else nan for r in records]),
        "p2": np.concatenate([r.p2 if r.p2 is not None else nan for r in records]),
        "r": np.concatenate([r.r for r in records]),
        "transformed": np.concatenate([r.transformed for r in records]),
    }
    pio.write_table(out / "runs", runs, meta, args.format)
    wcols = {k: np.array([getattr(w, k) for w in widths]) for k in widths[0].__dataclass_fields__}
    wcols["theta_deg"] = np.array(pcfg.angles_deg, dtype=float)
    wcols["gaussian_fit_ok"] = np.array(gauss_ok)
    pio.write_table(out / "widths", wcols, meta, args.format)

    sig = np.array([w.sigma_x for w in widths])
    summary["sigma_x_mean_m"] = float(np.sqrt(np.mean(sig ** 2)))
    summary["flagged_angles_deg"] = [a for a, w in zip(pcfg.angles_deg, widths) if w.flagged]
    summary["non_gaussian_angles_deg"] = [a for a, ok in zip(pcfg.angles_deg, gauss_ok) if not ok]
    i0, i90 = int(np.argmin(pcfg.angles_deg)), int(np.argmax(pcfg.angles_deg))
    if sig[i0] > 0 and sig[i90] > 0:
        T_eff = effective_temperature(sig[i0], sig[i90], osc)
        summary["T_eff_k"] = T_eff
        summary["n_eff"] = T_eff / osc.quantum_temperature - 0.5
        summary["T_eff_angles_deg"] = [pcfg.angles_deg[i0], pcfg.angles_deg[i90]]

    c = base.chis[-1]
    if all(0 <= th <= math.pi / 2 for th in thetas):
        ms = tomography.MarginalSet.from_samples(
            thetas, [r.transformed / c for r in records], bins=scenario.tomography.bins,
            scale=math.sqrt(2) * osc.x0, chi_used=c)
        pio.write_marginals(out / "marginals.json", ms, meta)
        if len(thetas) >= 2:
            wmap = _reconstruct(ms, scenario.tomography)
            pio.write_map(out / "phase_space_map.txt", wmap, meta)
            summary["map_negative_mass"] = wmap.negative_mass
    return summary


# ---------------------------------------------------------------------------
# tomo


def cmd_tomo(args) -> dict:
    src = Path(args.dataset)
    path = src / "marginals.json" if src.is_dir() else src
    if not path.exists():
        raise FileNotFoundError(f"no marginal set found at {path}")
    meta, ms = pio.read_marginals(path)
    tcfg = Scenario.model_validate(meta["config"]).tomography if "config" in meta else None
    grid = args.grid or (tcfg.grid if tcfg else 128)
    apod = args.apodization if args.apodization is not None else (tcfg.apodization if tcfg else 1.0)
    cut = args.cutoff if args.cutoff is not None else (tcfg.cutoff if tcfg else 1.0)
    wmap = tomography.inverse_radon(tomography.symmetrize(ms), grid, apodization=apod, cutoff=cut)
    out = Path(args.out) if args.out else (src if src.is_dir() else src.parent)
    out.mkdir(parents=True, exist_ok=True)
    prov = {"command": "tomo", "input": str(path), "input_sha256": pio.sha256_file(path),
            "grid": grid, "apodization": apod, "cutoff": cut, "source_meta": meta}
    pio.write_map(out / "phase_space_map.txt", wmap, prov)
    summary = {"negative_mass": wmap.negative_mass, "raw_mass": wmap.raw_mass,
               "angles": int(ms.angles.size), "input_sha256": prov["input_sha256"]}
    pio.write_json(out / "tomo_summary.json", {"meta": prov, "summary": summary})
    return summary


# ---------------------------------------------------------------------------
# noise-scan, meff, calibrate


def cmd_noise_scan(args, scenario: Scenario, out: Path) -> dict:
    cfg = _require(scenario, "noise_scan")
    spec = scenario.noise.build(scenario.seed)
    pts = noise.scan_total_photons(cfg.N_tot_values, spec, cfg.separation_s, seed=scenario.seed,
                                   pairs=cfg.pairs, bins=cfg.bins, ceiling=cfg.ceiling_N_tot)
    comps = [noise.model_components(p.N_tot, spec, cfg.separation_s) for p in pts]
    cols = {
        "N_tot": np.array([p.N_tot for p in pts]),
        "N_signal": np.array([p.N_tot * cfg.signal_fraction for p in pts]),
        "variance": np.array([p.variance for p in pts]),
        "variance_err": np.array([p.variance_err for p in pts]),
        "model_quantum": np.array([c["quantum"] for c in comps]),
        "model_classical": np.array([c["classical"] for c in comps]),
        "model_electronic": np.array([c["electronic"] for c in comps]),
    }
    pio.write_table(out / "noise_scan", cols, _meta(scenario, "noise-scan"), args.format)
    cmp_ = noise.compare_models(pts)
    summary = {
        "linear_slope": cmp_.linear.slope, "linear_intercept": cmp_.linear.intercept,
        "linear_r2": cmp_.linear.r2, "quadratic_r2": cmp_.quadratic.r2,
        "aic_linear": cmp_.linear.aic, "aic_quadratic": cmp_.quadratic.aic,
        "quadratic_pvalue": cmp_.pvalue, "preferred": cmp_.preferred,
    }
    if cfg.electronic_check_N_tot is not None:
        if spec.electronic_variance <= 0:
            raise ConfigError("config error at noise.electronic_variance: electronic check needs detector noise")
        db, err = noise.measure_electronic_db(spec, cfg.electronic_check_N_tot, cfg.separation_s,
                                              seed=scenario.seed, pairs=cfg.electronic_check_pairs)
        summary["electronic_db_below"] = db
        summary["electronic_db_err"] = err
    return summary


def cmd_meff(args, scenario: Scenario, out: Path, config_dir: Path) -> dict:
    cfg = _require(scenario, "meff")
    if cfg.grid_file is not None:
        gpath = Path(cfg.grid_file)
        if not gpath.is_absolute():
            gpath = config_dir / gpath
        mode = modal.read_grid(gpath)
    else:
        c = cfg.cantilever
        mode = modal.cantilever_mode(
            total_length=c.total_length_m, arm_width=c.arm_width_m, head_diameter=c.head_diameter_m,
            thickness=c.thickness_m, density=c.density_kg_m3, head=c.head,
            cells_across_arm=c.cells_across_arm, dx=c.dx_m, nz=c.nz)
    beam = modal.BeamProfile(cfg.beam_diameter_m / 4, tuple(cfg.beam_center_m))
    summary = {
        "total_mass_kg": modal.total_mass(mode),
        "overlap_D": modal.optical_overlap(mode, beam),
        "effective_mass_kg": modal.effective_mass(mode, beam),
        "cells": int(mode.mask.sum()),
    }
    if cfg.modes:
        summary["rms_relative"] = modal.rms_contributions(cfg.modes).tolist()
    return summary


def cmd_calibrate(args, scenario: Scenario, out: Path) -> dict:
    cfg = _require(scenario, "calibrate")
    omega = 2 * math.pi * cfg.drive_hz
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    wavelength = scenario.pulse.wavelength_m
    drift = cfg.phi0_rad + (calibration.phase_drift(n, fs, rate_rms=cfg.drift_rate_rad_s,
                                                    corner_hz=cfg.drift_corner_hz,
                                                    gen=rng_mod.stream(scenario.seed, 0))
                            if cfg.drift_rate_rad_s > 0 else 0.0)

    def trace(vpp, key=1):
        t = calibration.simulate_piezo_fringe(drift, cfg.piezo_rad_per_v * vpp / 2, omega, cfg.duration_s, fs)
        if cfg.snr_db is not None:
            sd = t.std() * 10 ** (-cfg.snr_db / 20)
            t = t + sd * rng_mod.stream(scenario.seed, key).standard_normal(t.shape)
        return t

    piezo = calibration.calibrate_piezo(trace, fs, omega, cfg.vpp_bracket, wavelength)
    summary = {"vpp_half_wave": piezo.vpp_half_wave, "volts_to_meters": piezo.volts_to_meters}
    if cfg.test_vpp is not None:
        rep = calibration.detect_half_wave_condition(trace(cfg.test_vpp, key=2), fs, omega)
        summary["test_vpp"] = cfg.test_vpp
        summary["test_coincident"] = rep.is_coincident
        summary["test_mismatch"] = rep.mismatch

    volts = np.linspace(-cfg.scan_vpp / 2, cfg.scan_vpp / 2, cfg.scan_points)
    x_true = volts * cfg.piezo_rad_per_v * wavelength / (4 * math.pi)
    outcomes = calibration.synthetic_scan_outcomes(x_true, cfg.scan_N_signal, wavelength,
                                                   rng_mod.stream(scenario.seed, 3))
    oc = calibration.calibrate_outcome_per_meter(volts, piezo.volts_to_meters, outcomes)
    summary.update({"outcome_per_meter": oc.slope, "outcome_per_meter_err": oc.slope_err,
                    "expected_outcome_per_meter": calibration.expected_slope(cfg.scan_N_signal, wavelength)})
    pio.write_table(out / "calibration_scan", {"volts": volts, "outcome": outcomes},
                    _meta(scenario, "calibrate"), args.format)
    return summary


# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsemech", description="Pulsed back-action-evading position measurement toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="scenario YAML file or the name of a bundled scenario")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output directory (overrides the scenario)")
        p.add_argument("--deterministic", action="store_true",
                       help="run sequentially for bit-exact audits")
        p.add_argument("--format", choices=("csv", "json"), help="table format")

    helps = {
        "run": "simulate a pulse protocol and write widths, marginals and a map",
        "noise-scan": "scan pulse-pair variance against photon number and compare noise models",
        "meff": "effective mass of a mode shape under a Gaussian beam",
        "calibrate": "simulate a piezo scan and a half-wave drive check",
    }
    for name, text in helps.items():
        common(sub.add_parser(name, help=text))
    tomo = sub.add_parser("tomo", help="reconstruct a phase-space map from a run directory")
    tomo.add_argument("dataset", help="run output directory or marginals.json")
    tomo.add_argument("--grid", type=int)
    tomo.add_argument("--apodization", type=float)
    tomo.add_argument("--cutoff", type=float)
    common(tomo, config_required=False)
    return parser


def _fault_context(exc: BaseException) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    mods = [Path(f.filename).stem for f in tb if "pulsemech" in f.filename]
    return mods[-1] if mods else "pulsemech"


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "tomo":
            summary = cmd_tomo(args)
            print(pio.dumps(summary), end="")
            return 0
        config_path = resolve_config(args.config)
        scenario = load_scenario(config_path)
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if updates:
            scenario = Scenario.model_validate({**scenario.model_dump(), **updates})
        args.format = args.format or scenario.output.format
        out = Path(args.out or scenario.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            summary = cmd_run(args, scenario, out)
        elif args.command == "noise-scan":
            summary = cmd_noise_scan(args, scenario, out)
        elif args.command == "meff":
            summary = cmd_meff(args, scenario, out, config_path.parent)
        else:
            summary = cmd_calibrate(args, scenario, out)
        pio.write_json(out / "summary.json", {"meta": _meta(scenario, args.command), "summary": summary})
        print(pio.dumps(summary), end="")
        return 0
    except ValidationError as exc:
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            print(f"config error at {loc}: {err['msg']}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        if isinstance(exc, PulseMechError):
            print(f"error [{_fault_context(exc)}:{exc.code}]: {exc}", file=sys.stderr)
            return EXIT_FAULT
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except PulseMechError as exc:
        print(f"error [{_fault_context(exc)}:{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
