"""Command line entry point: classical and quantum sweeps, bath audit and rate refits.

    python cli.py classical --config manifests/defaults.env --out results
    python cli.py quantum --config manifests/smoke.env --halve-dt
    python cli.py bath-spectrum
    python cli.py fit-rate results/classical/E2meV_T0K/trapping.csv --window-lo-ps 40 --window-hi-ps 60
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from analysis.csv_reader import read_trapping_series
from config import (VERSION, RunManifest, RuntimeSettings, configure_logging, job_seed, load_manifest,
                    runtime_settings)
from dynamics import EnsembleResult, resolve_timestep, run_ensembles, run_trajectory
from errors import EmptyResultError, FitDomainError, ScatterSimError
from model import thermal_ratio
from observables import (RateFit, TimeSeries, angular_distribution, density_vs_n, energy_loss_vs_n,
                         escape_probability, escaped_energy, escaped_energy_conditional, fit_arrhenius, fit_rate,
                         histogram_peaks, histogram_variance, mean_bath_energy, trapping_probability)
from qdynamics import (QuantumRun, build_grid, diffraction_peaks, quantum_angular_distribution,
                       run_wavepacket)
from sampling import sample_point
from units import Dimension, atomic, unit_factor, user
from utils.io import write_csv, write_json, write_snapshot, write_trajectory

logger = logging.getLogger(__name__)

SCHEMA = 1


def _mev(values):
    """Hartree to meV without the finiteness check (conditional means may be NaN)"""
    return np.asarray(values, dtype=float) / unit_factor(Dimension.ENERGY, "meV")


def _ps(times):
    return user(np.asarray(times, dtype=float), Dimension.TIME, "ps")


def _job_label(ei_meV: float, t_K: Optional[float] = None) -> str:
    if t_K is None:
        return f"E{ei_meV:g}meV"
    return f"E{ei_meV:g}meV_T{t_K:g}K"


def _series_frame(ts: TimeSeries, column: str, energy: bool = False) -> pd.DataFrame:
    convert = _mev if energy else np.asarray
    return pd.DataFrame({"t_ps": _ps(ts.times), column: convert(ts.values), "stderr": convert(ts.stderr)})


def _histogram_frame(hist) -> pd.DataFrame:
    stderr = hist.stderr if hist.stderr is not None else np.zeros_like(hist.counts)
    return pd.DataFrame({"n": hist.centers, "rho": hist.probabilities, "stderr": stderr})


def update_summary(out_dir: str, section: str, payload: Dict[str, Any]) -> str:
    """Merge one command's results into <out>/summary.json"""
    path = os.path.join(out_dir, "summary.json")
    summary: Dict[str, Any] = {}
    if os.path.exists(path):
        try:
            with open(path, encoding="utf-8") as f:
                summary = json.load(f)
        except (OSError, ValueError):
            logger.warning("replacing unreadable %s", path)
            summary = {}
        if summary.get("schema") != SCHEMA:
            summary = {}
    summary.update({"schema": SCHEMA, "version": VERSION, section: payload})
    return write_json(path, summary)


# classical

def _classical_tasks(manifest: RunManifest, halve_dt: bool):
    jobs = []
    for ei, ei_meV in zip(manifest.energies, manifest.energies_meV()):
        for t_K in manifest.temperatures_K:
            seed = job_seed(manifest.seed, ei_meV, t_K)
            spec = manifest.spec(ei, t_K)
            # halve the step actually integrated, after stability subdivision
            cfg = resolve_timestep(manifest.integrator, spec)
            if halve_dt:
                cfg = cfg.halved()
            jobs.append((ei_meV, t_K, seed, (spec, spec.T, replace(manifest.ensemble, seed=seed), cfg)))
    return jobs


def _write_classical_job(job_dir: str, ens: EnsembleResult, manifest: RunManifest,
                         seed: int) -> Tuple[Dict[str, Any], Optional[RateFit]]:
    echo = manifest.echo
    trap = trapping_probability(ens)
    write_csv(os.path.join(job_dir, "trapping.csv"), _series_frame(trap, "P_trap"), seed, echo)
    write_csv(os.path.join(job_dir, "escape.csv"), _series_frame(escape_probability(ens), "P_escape"), seed, echo)
    e_es = escaped_energy(ens)
    e_cond = escaped_energy_conditional(ens)
    write_csv(os.path.join(job_dir, "escaped_energy.csv"), _series_frame(e_es, "E_es_meV", energy=True),
              seed, echo)
    write_csv(os.path.join(job_dir, "escaped_energy_conditional.csv"),
              _series_frame(e_cond, "E_es_meV", energy=True), seed, echo)

    entry: Dict[str, Any] = {
        "seed": seed,
        "n_traj": ens.n_total,
        "n_aborted": ens.n_aborted,
        "n_escaped_at_analysis": int(ens.final_escaped.sum()),
        "max_energy_drift": ens.max_drift,
        "n_departed": ens.n_departed,
        "n_reentered": ens.n_reentered,
        "escaped_energy_final_meV": float(_mev(e_es.values[-1])),
        "escaped_energy_conditional_final_meV": float(_mev(e_cond.values[-1])),
        "mean_bath_mode_energy_meV": _mev(mean_bath_energy(ens)).tolist(),
    }
    fit = None
    try:
        fit = fit_rate(trap, manifest.fit_window)
        entry["rate_fit"] = fit.to_dict()
    except FitDomainError as e:
        logger.warning("no rate fit for %s: %s", job_dir, e)
        entry["rate_fit"] = {"error": str(e)}

    try:
        rho = density_vs_n(ens, manifest.bin_width)
        rho_fine = density_vs_n(ens, manifest.fine_bin_width)
        angular = angular_distribution(ens, manifest.bin_width)
        loss = energy_loss_vs_n(ens, manifest.bin_width)
    except EmptyResultError as e:
        logger.warning("no distributions for %s: %s", job_dir, e)
        entry["distributions"] = {"error": str(e)}
        return entry, fit
    write_csv(os.path.join(job_dir, "rho_n.csv"), _histogram_frame(rho), seed, echo)
    write_csv(os.path.join(job_dir, "rho_n_fine.csv"), _histogram_frame(rho_fine), seed, echo)
    write_csv(os.path.join(job_dir, "angular.csv"), _histogram_frame(angular), seed, echo)
    write_csv(os.path.join(job_dir, "energy_loss.csv"), pd.DataFrame({
        "n": loss.n_centers, "E_loss_meV": _mev(loss.loss), "stderr": _mev(loss.stderr), "count": loss.counts,
    }), seed, echo)
    entry["distributions"] = {
        "rho_variance": histogram_variance(rho),
        "rho_peaks": histogram_peaks(rho).tolist(),
        "rho_fine_variance": histogram_variance(rho_fine),
        "rho_fine_peaks": histogram_peaks(rho_fine).tolist(),
        "angular_variance": histogram_variance(angular),
        "angular_peaks": histogram_peaks(angular).tolist(),
    }
    return entry, fit


def cmd_classical(manifest: RunManifest, settings: RuntimeSettings, out_dir: str,
                  halve_dt: bool = False) -> Dict[str, Any]:
    jobs = _classical_tasks(manifest, halve_dt)
    logger.info("classical sweep: %d (E_i, T) jobs x %d trajectories", len(jobs), manifest.ensemble.n_traj)
    results = run_ensembles([job[3] for job in jobs], n_jobs=settings.n_jobs)

    payload: Dict[str, Any] = {"jobs": {}, "arrhenius": {}}
    fits_by_energy: Dict[float, List[Tuple[float, Any]]] = {}
    for (ei_meV, t_K, seed, task), ens in zip(jobs, results):
        label = _job_label(ei_meV, t_K)
        job_dir = os.path.join(out_dir, "classical", label)
        entry, fit = _write_classical_job(job_dir, ens, manifest, seed)
        entry.update({"E_i_meV": ei_meV, "T_K": t_K})
        payload["jobs"][label] = entry
        logger.info("finished %s", label)
        if fit is not None:
            fits_by_energy.setdefault(ei_meV, []).append((t_K, fit))
        for k in range(min(manifest.dump_trajectories, task[2].n_traj)):
            spec, kT, ens_cfg, cfg = task
            record = run_trajectory(spec, sample_point(spec, kT, k, ens_cfg.seed), cfg)
            write_trajectory(os.path.join(job_dir, f"trajectory_{k}.bin"), record, spec.bath.N)

    for ei_meV, pairs in fits_by_energy.items():
        positive = [(t, f) for t, f in pairs if t > 0]
        if len(positive) < 2:
            continue
        arrhenius = fit_arrhenius([t for t, _ in positive], [f for _, f in positive])
        payload["arrhenius"][_job_label(ei_meV)] = arrhenius.to_dict()
        frame = pd.DataFrame({
            "T_K": arrhenius.temperatures_K,
            "inv_T_per_K": 1.0 / np.asarray(arrhenius.temperatures_K),
            "m_per_fs": arrhenius.rates_per_fs,
            "ln_m": np.log(arrhenius.rates_per_fs),
        })
        write_csv(os.path.join(out_dir, "classical", f"arrhenius_{ei_meV:g}meV.csv"), frame,
                  manifest.seed, manifest.echo)

    payload["manifest"] = manifest.echo
    payload["seed"] = manifest.seed
    update_summary(out_dir, "classical", payload)
    return payload


# quantum

def _write_quantum_job(job_dir: str, run: QuantumRun, manifest: RunManifest, spec,
                       grid) -> Dict[str, Any]:
    echo, seed = manifest.echo, manifest.seed
    zeros = np.zeros(len(run.times))
    trap = TimeSeries(run.times, run.trapping, zeros)
    write_csv(os.path.join(job_dir, "trapping.csv"), _series_frame(trap, "P_trap"), seed, echo)
    write_csv(os.path.join(job_dir, "escaped_energy.csv"), pd.DataFrame({
        "t_ps": _ps(run.times), "E_es_meV": _mev(run.escaped_energy), "stderr": zeros,
        "ordering_gap_meV": _mev(run.ordering_gap),
    }), seed, echo)
    a = run.analysis
    write_csv(os.path.join(job_dir, "rho_n.csv"), pd.DataFrame({
        "n": a.channels, "rho": a.rho, "stderr": np.zeros(len(a.rho)),
    }), seed, echo)
    write_csv(os.path.join(job_dir, "energy_n.csv"), pd.DataFrame({"n": a.channels, "E_meV": _mev(a.energy)}),
              seed, echo)
    for t, density in sorted(run.snapshots.items()):
        write_snapshot(os.path.join(job_dir, f"snapshot_{_ps(t):g}ps.bin"), density, grid)

    peaks = diffraction_peaks(a, spec.corrugation.l)
    entry: Dict[str, Any] = {
        "escaped_mass": a.escaped_mass,
        "absorbed_mass": run.absorbed,
        "final_norm": float(run.norm[-1]),
        "initial_energy_meV": float(_mev(run.initial_energy)),
        "max_ordering_gap_meV": float(_mev(run.ordering_gap.max())),
        "diffraction_peaks": peaks.tolist(),
    }
    try:
        angular = quantum_angular_distribution(a, spec, manifest.bin_width)
        write_csv(os.path.join(job_dir, "angular.csv"), _histogram_frame(angular), seed, echo)
        entry["angular_variance"] = histogram_variance(angular)
    except EmptyResultError as e:
        logger.warning("no angular distribution for %s: %s", job_dir, e)
    write_json(os.path.join(job_dir, "peaks.json"), {
        "schema": SCHEMA,
        "version": VERSION,
        "seed": seed,
        "manifest": echo,
        "diffraction_peaks": peaks.tolist(),
        "nearest_integer": np.rint(peaks).astype(int).tolist(),
        "channels": a.channels.tolist(),
        "rho": a.rho.tolist(),
    })
    try:
        entry["rate_fit"] = fit_rate(trap, manifest.fit_window).to_dict()
    except ScatterSimError as e:
        entry["rate_fit"] = {"error": str(e)}
    return entry


def cmd_quantum(manifest: RunManifest, settings: RuntimeSettings, out_dir: str,
                halve_dt: bool = False) -> Dict[str, Any]:
    qcfg = manifest.quantum.halved() if halve_dt else manifest.quantum
    specs = [manifest.spec(ei, 0.0) for ei in manifest.energies]
    grids = [build_grid(spec, **manifest.grid) for spec in specs]
    logger.info("quantum sweep: %d wavepacket runs on %dx%d grids", len(specs), grids[0].n_z, grids[0].n_x)
    runs = Parallel(n_jobs=settings.n_jobs)(
        delayed(run_wavepacket)(spec, grid, qcfg) for spec, grid in zip(specs, grids)
    )
    payload: Dict[str, Any] = {"jobs": {}}
    for ei_meV, spec, grid, run in zip(manifest.energies_meV(), specs, grids, runs):
        label = _job_label(ei_meV)
        entry = _write_quantum_job(os.path.join(out_dir, "quantum", label), run, manifest, spec, grid)
        entry["E_i_meV"] = ei_meV
        payload["jobs"][label] = entry
        logger.info("finished quantum %s", label)
    payload["manifest"] = manifest.echo
    update_summary(out_dir, "quantum", payload)
    return payload


# bath audit and refits

def cmd_bath_spectrum(manifest: RunManifest) -> pd.DataFrame:
    spec = manifest.spec(manifest.energies[0], 0.0)
    bath = spec.bath
    frame = pd.DataFrame({
        "j": np.arange(1, bath.N + 1),
        "omega_au": bath.omegas,
        "omega_meV": _mev(bath.omegas),
        "omega_over_omega_c": bath.omegas / bath.omega_c,
        "c_au": bath.couplings,
    })
    for t_K in manifest.temperatures_K:
        if t_K > 0:
            frame[f"theta_{t_K:g}K"] = thermal_ratio(bath, atomic(t_K, Dimension.TEMPERATURE, "K"))
    return frame


def cmd_fit_rate(csv_path: str, window: Tuple[float, float]) -> Dict[str, Any]:
    return fit_rate(read_trapping_series(csv_path), window).to_dict()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scattersim",
                                     description="Atom-surface scattering with a harmonic phonon bath")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", type=str, default=None, help="Run manifest (KEY=value lines)")
        p.add_argument("--seed", type=int, default=None, help="Override ENSEMBLE_SEED")
        p.add_argument("--out", type=str, default=None, help="Output directory")
        p.add_argument("--dry-run", action="store_true", help="Validate and print resolved atomic-unit parameters")
        p.add_argument("--halve-dt", action="store_true", help="Rerun with half the time step (convergence audit)")

    for name, text in (("classical", "Wigner-sampled trajectory ensembles over the E_i x T sweep"),
                       ("quantum", "Bath-decoupled wavepacket runs per E_i"),
                       ("bath-spectrum", "Print the discretized bath frequencies and couplings")):
        common(sub.add_parser(name, help=text))

    fit = sub.add_parser("fit-rate", help="Refit c*exp(-m t) to an emitted trapping series")
    common(fit)
    fit.add_argument("csv", type=str, help="trapping.csv written by a previous run")
    fit.add_argument("--window-lo-ps", type=float, default=None)
    fit.add_argument("--window-hi-ps", type=float, default=None)
    return parser


def run(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    manifest = load_manifest(args.config)
    if args.seed is not None:
        manifest = manifest.with_seed(args.seed)
    out_dir = args.out or settings.out_dir or manifest.out_dir

    if args.dry_run:
        print(json.dumps(manifest.resolved(), indent=2, sort_keys=True))
        return 0

    if args.command == "classical":
        cmd_classical(manifest, settings, out_dir, halve_dt=args.halve_dt)
    elif args.command == "quantum":
        cmd_quantum(manifest, settings, out_dir, halve_dt=args.halve_dt)
    elif args.command == "bath-spectrum":
        frame = cmd_bath_spectrum(manifest)
        write_csv(os.path.join(out_dir, "bath_spectrum.csv"), frame, manifest.seed, manifest.echo)
        print(frame.to_string(index=False))
    elif args.command == "fit-rate":
        lo, hi = manifest.fit_window
        if args.window_lo_ps is not None:
            lo = atomic(args.window_lo_ps, Dimension.TIME, "ps")
        if args.window_hi_ps is not None:
            hi = atomic(args.window_hi_ps, Dimension.TIME, "ps")
        print(json.dumps(cmd_fit_rate(args.csv, (lo, hi)), indent=2, sort_keys=True))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = runtime_settings()
        configure_logging(settings.log_level)
        return run(args, settings)
    except ScatterSimError as e:
        logger.error("%s", e)
        print(f"scattersim: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
