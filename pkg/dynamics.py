"""Leapfrog (velocity Verlet) propagation of classical trajectories and ensembles.

Trajectories are integrated in fixed-size chunks as vectorised batches. Chunks are
independent work items; their partial sums are reduced in chunk order, so the
aggregate never depends on how many workers ran them.
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from errors import AbortThresholdError, ConfigError
from model import Forces, ModelSpec, PhasePoint, bath_mode_energies, forces, system_energy, total_energy
from sampling import EnsembleConfig, sample_batch
from units import Dimension, atomic

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 0.1
ABORT_FRACTION_LIMIT = 1e-3

ForceFn = Callable[[ModelSpec, PhasePoint], Forces]


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = atomic(1.0, Dimension.TIME, "fs")
    t_final: float = atomic(60.0, Dimension.TIME, "ps")
    record_stride: int = 10
    analysis_time: Optional[float] = atomic(59.0, Dimension.TIME, "ps")
    reentry_after: float = atomic(40.0, Dimension.TIME, "ps")
    drift_bound: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("time step must be positive", field="INTEGRATOR_DT")
        if not self.t_final > 0:
            raise ConfigError("final time must be positive", field="INTEGRATOR_T_FINAL")
        if self.record_stride < 1:
            raise ConfigError("record stride must be at least 1", field="INTEGRATOR_RECORD_STRIDE")
        if self.analysis_time is not None and not 0 <= self.analysis_time <= self.t_final:
            raise ConfigError("analysis time must lie within the run", field="ANALYSIS_TIME")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def analysis_step(self) -> int:
        if self.analysis_time is None:
            return self.n_steps
        return min(int(round(self.analysis_time / self.dt)), self.n_steps)

    def record_times(self) -> np.ndarray:
        n_rec = self.n_steps // self.record_stride + 1
        return np.arange(n_rec) * (self.record_stride * self.dt)

    def halved(self) -> "IntegratorConfig":
        return replace(self, dt=0.5 * self.dt, record_stride=2 * self.record_stride)


def resolve_timestep(cfg: IntegratorConfig, spec: ModelSpec) -> IntegratorConfig:
    """Subdivide dt until dt * w_max < 0.1, keeping the recording interval fixed"""
    omega_max = float(spec.bath.omegas.max())
    if cfg.dt * omega_max < STABILITY_LIMIT:
        return cfg
    factor = int(np.floor(cfg.dt * omega_max / STABILITY_LIMIT)) + 1
    resolved = replace(cfg, dt=cfg.dt / factor, record_stride=cfg.record_stride * factor)
    logger.warning(
        "dt * w_max = %.3f breaks the %.1f stability bound; dt reduced %dx to %.4g a.u.",
        cfg.dt * omega_max, STABILITY_LIMIT, factor, resolved.dt,
    )
    return resolved


@dataclass
class TrajectoryRecord:
    """Time series and final state of one trajectory"""
    times: np.ndarray
    energies: np.ndarray
    escaped: np.ndarray
    z: np.ndarray
    x: np.ndarray
    pz: np.ndarray
    px: np.ndarray
    final: Tuple[float, float, float, float]
    final_bath_energies: np.ndarray
    initial_energy: float
    max_drift: float
    aborted: bool
    n_steps: int
    record_stride: int


@dataclass
class EnsembleResult:
    """Aggregated time series plus per-trajectory states at the analysis time"""
    spec: ModelSpec
    T: float
    ensemble: EnsembleConfig
    integrator: IntegratorConfig
    times: np.ndarray
    n_total: int
    n_aborted: int
    escaped_count: np.ndarray
    escaped_energy_sum: np.ndarray
    escaped_energy_sq: np.ndarray
    initial_px: np.ndarray
    initial_energy: np.ndarray
    final_z: np.ndarray
    final_x: np.ndarray
    final_pz: np.ndarray
    final_px: np.ndarray
    final_bath_energy: np.ndarray
    max_drift: float
    n_departed: int
    n_reentered: int

    @property
    def n_valid(self) -> int:
        return self.n_total - self.n_aborted

    @property
    def final_escaped(self) -> np.ndarray:
        return self.final_z >= self.spec.z0


def _verlet(spec: ModelSpec, p: PhasePoint, f: Forces, dt: float,
            force_fn: ForceFn) -> Tuple[PhasePoint, Forces]:
    half = 0.5 * dt
    pz = p.pz + half * f.fz
    px = p.px + half * f.fx
    bath_p = p.bath_p + half * f.f_bath
    moved = PhasePoint(
        z=p.z + dt * pz / spec.M,
        x=p.x + dt * px / spec.M,
        pz=pz,
        px=px,
        bath_x=p.bath_x + dt * bath_p,
        bath_p=bath_p,
    )
    f_new = force_fn(spec, moved)
    return PhasePoint(
        z=moved.z,
        x=moved.x,
        pz=pz + half * f_new.fz,
        px=px + half * f_new.fx,
        bath_x=moved.bath_x,
        bath_p=bath_p + half * f_new.f_bath,
    ), f_new


def step(spec: ModelSpec, p: PhasePoint, dt: float, force_fn: ForceFn = forces) -> PhasePoint:
    """One time-reversible, symplectic leapfrog step"""
    return _verlet(spec, p, force_fn(spec, p), dt, force_fn)[0]


def _finite_rows(p: PhasePoint) -> np.ndarray:
    ok = np.isfinite(p.z) & np.isfinite(p.x) & np.isfinite(p.pz) & np.isfinite(p.px)
    return ok & np.all(np.isfinite(p.bath_x), axis=-1) & np.all(np.isfinite(p.bath_p), axis=-1)


def _restore_rows(p: PhasePoint, origin: PhasePoint, mask: np.ndarray) -> PhasePoint:
    """Put aborted rows back at their initial state so they stay finite while excluded"""
    m2 = mask[:, None]
    return PhasePoint(
        z=np.where(mask, origin.z, p.z),
        x=np.where(mask, origin.x, p.x),
        pz=np.where(mask, origin.pz, p.pz),
        px=np.where(mask, origin.px, p.px),
        bath_x=np.where(m2, origin.bath_x, p.bath_x),
        bath_p=np.where(m2, origin.bath_p, p.bath_p),
    )


@dataclass
class _BatchRun:
    escaped: np.ndarray
    energies: np.ndarray
    series: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    analysis_state: PhasePoint
    final_state: PhasePoint
    initial_energy: np.ndarray
    aborted: np.ndarray
    max_drift: np.ndarray
    departed: np.ndarray
    reentered: np.ndarray


def _propagate_batch(spec: ModelSpec, start: PhasePoint, cfg: IntegratorConfig,
                     keep_series: bool = False) -> _BatchRun:
    """Integrate a batch of trajectories, recording every record_stride steps"""
    times = cfg.record_times()
    n_rec = len(times)
    n = len(start.z)
    escaped = np.zeros((n_rec, n), dtype=bool)
    energies = np.zeros((n_rec, n))
    series = tuple(np.zeros((n_rec, n)) for _ in range(4)) if keep_series else None

    aborted = np.zeros(n, dtype=bool)
    departed = np.zeros(n, dtype=bool)
    reentered = np.zeros(n, dtype=bool)
    max_drift = np.zeros(n)
    e_total0 = total_energy(spec, start)
    scale = np.where(np.abs(e_total0) > 0, np.abs(e_total0), 1.0)
    initial_energy = system_energy(spec, start.z, start.x, start.pz, start.px)

    state = start
    f = forces(spec, state)
    analysis_state = start if cfg.analysis_step == 0 else None

    def record(r: int):
        nonlocal state, f
        bad = ~_finite_rows(state) & ~aborted
        if bad.any():
            logger.warning("%d trajectories went non-finite at t=%.6g a.u.; excluded", int(bad.sum()), times[r])
            aborted[bad] = True
            state = _restore_rows(state, start, aborted)
            f = forces(spec, state)
        is_out = state.z >= spec.z0
        escaped[r] = is_out
        energies[r] = system_energy(spec, state.z, state.x, state.pz, state.px)
        if series is not None:
            for target, values in zip(series, (state.z, state.x, state.pz, state.px)):
                target[r] = values
        drift = np.abs(total_energy(spec, state) - e_total0) / scale
        np.maximum(max_drift, np.where(aborted, 0.0, drift), out=max_drift)
        if times[r] >= cfg.reentry_after:
            reentered[departed & ~is_out] = True
            departed[is_out & (state.pz > 0)] = True

    record(0)
    for i in range(1, cfg.n_steps + 1):
        state, f = _verlet(spec, state, f, cfg.dt, forces)
        if i % cfg.record_stride == 0:
            record(i // cfg.record_stride)
        if i == cfg.analysis_step:
            bad = ~_finite_rows(state) & ~aborted
            if bad.any():
                aborted[bad] = True
                state = _restore_rows(state, start, aborted)
                f = forces(spec, state)
            analysis_state = state

    return _BatchRun(escaped, energies, series, analysis_state, state, initial_energy,
                     aborted, max_drift, departed, reentered)


def _as_batch(p: PhasePoint) -> PhasePoint:
    return PhasePoint(
        z=np.atleast_1d(np.asarray(p.z, dtype=float)),
        x=np.atleast_1d(np.asarray(p.x, dtype=float)),
        pz=np.atleast_1d(np.asarray(p.pz, dtype=float)),
        px=np.atleast_1d(np.asarray(p.px, dtype=float)),
        bath_x=np.atleast_2d(np.asarray(p.bath_x, dtype=float)),
        bath_p=np.atleast_2d(np.asarray(p.bath_p, dtype=float)),
    )


def run_trajectory(spec: ModelSpec, p0: PhasePoint, cfg: IntegratorConfig) -> TrajectoryRecord:
    """Propagate one trajectory and keep its full recorded time series"""
    cfg = resolve_timestep(cfg, spec)
    with np.errstate(over="ignore", invalid="ignore"):
        run = _propagate_batch(spec, _as_batch(p0), cfg, keep_series=True)
    z, x, pz, px = (s[:, 0] for s in run.series)
    end = run.final_state
    drift = float(run.max_drift[0])
    if drift > cfg.drift_bound:
        logger.info("trajectory energy drift %.3g exceeds the monitored bound %.1g", drift, cfg.drift_bound)
    return TrajectoryRecord(
        times=cfg.record_times(),
        energies=run.energies[:, 0],
        escaped=run.escaped[:, 0],
        z=z, x=x, pz=pz, px=px,
        final=(float(end.z[0]), float(end.x[0]), float(end.pz[0]), float(end.px[0])),
        final_bath_energies=bath_mode_energies(spec, end)[0],
        initial_energy=float(run.initial_energy[0]),
        max_drift=drift,
        aborted=bool(run.aborted[0]),
        n_steps=cfg.n_steps,
        record_stride=cfg.record_stride,
    )


@dataclass
class _ChunkSummary:
    escaped_count: np.ndarray
    escaped_energy_sum: np.ndarray
    escaped_energy_sq: np.ndarray
    n_aborted: int
    initial_px: np.ndarray
    initial_energy: np.ndarray
    final: PhasePoint
    final_bath_energy: np.ndarray
    max_drift: float
    n_departed: int
    n_reentered: int


def _run_chunk(spec: ModelSpec, T: float, seed: int, start: int, stop: int,
               cfg: IntegratorConfig) -> _ChunkSummary:
    """Sample and integrate trajectories start..stop-1 and reduce them to partial sums"""
    p0 = sample_batch(spec, T, range(start, stop), seed)
    with np.errstate(over="ignore", invalid="ignore"):
        run = _propagate_batch(spec, p0, cfg)
    keep = ~run.aborted
    esc = run.escaped[:, keep]
    e_esc = np.where(esc, run.energies[:, keep], 0.0)
    final = PhasePoint(*(np.asarray(v)[keep] for v in run.analysis_state))
    return _ChunkSummary(
        escaped_count=esc.sum(axis=1),
        escaped_energy_sum=e_esc.sum(axis=1),
        escaped_energy_sq=(e_esc ** 2).sum(axis=1),
        n_aborted=int(run.aborted.sum()),
        initial_px=p0.px[keep],
        initial_energy=run.initial_energy[keep],
        final=final,
        final_bath_energy=bath_mode_energies(spec, final),
        max_drift=float(run.max_drift[keep].max()) if keep.any() else 0.0,
        n_departed=int(run.departed[keep].sum()),
        n_reentered=int(run.reentered[keep].sum()),
    )


def _chunk_bounds(ens: EnsembleConfig) -> List[Tuple[int, int]]:
    starts = range(0, ens.n_traj, ens.chunk_size)
    return [(s, min(s + ens.chunk_size, ens.n_traj)) for s in starts]


def _reduce(spec: ModelSpec, T: float, ens: EnsembleConfig, cfg: IntegratorConfig,
            chunks: Sequence[_ChunkSummary]) -> EnsembleResult:
    """Ordered reduction by chunk index"""
    escaped_count = np.zeros_like(chunks[0].escaped_count)
    energy_sum = np.zeros_like(chunks[0].escaped_energy_sum)
    energy_sq = np.zeros_like(chunks[0].escaped_energy_sq)
    for c in chunks:
        escaped_count = escaped_count + c.escaped_count
        energy_sum = energy_sum + c.escaped_energy_sum
        energy_sq = energy_sq + c.escaped_energy_sq

    def cat(getter):
        return np.concatenate([getter(c) for c in chunks])

    result = EnsembleResult(
        spec=spec,
        T=T,
        ensemble=ens,
        integrator=cfg,
        times=cfg.record_times(),
        n_total=ens.n_traj,
        n_aborted=sum(c.n_aborted for c in chunks),
        escaped_count=escaped_count,
        escaped_energy_sum=energy_sum,
        escaped_energy_sq=energy_sq,
        initial_px=cat(lambda c: c.initial_px),
        initial_energy=cat(lambda c: c.initial_energy),
        final_z=cat(lambda c: c.final.z),
        final_x=cat(lambda c: c.final.x),
        final_pz=cat(lambda c: c.final.pz),
        final_px=cat(lambda c: c.final.px),
        final_bath_energy=np.concatenate([c.final_bath_energy for c in chunks], axis=0),
        max_drift=max(c.max_drift for c in chunks),
        n_departed=sum(c.n_departed for c in chunks),
        n_reentered=sum(c.n_reentered for c in chunks),
    )
    if result.n_aborted:
        logger.warning("%d of %d trajectories aborted", result.n_aborted, result.n_total)
    if result.n_aborted > ABORT_FRACTION_LIMIT * result.n_total:
        logger.error("aborted fraction %.4f breaks the %.1e limit", result.n_aborted / result.n_total,
                     ABORT_FRACTION_LIMIT)
        raise AbortThresholdError(result.n_aborted, result.n_total, ABORT_FRACTION_LIMIT)
    if result.n_departed:
        logger.info("%d of %d departed trajectories re-entered the dividing surface",
                    result.n_reentered, result.n_departed)
    return result


EnsembleTask = Tuple[ModelSpec, float, EnsembleConfig, IntegratorConfig]


def run_ensembles(tasks: Sequence[EnsembleTask], n_jobs: int = 1) -> List[EnsembleResult]:
    """Run several ensembles with all their chunks scheduled on one worker pool"""
    resolved = [(spec, T, ens, resolve_timestep(cfg, spec)) for spec, T, ens, cfg in tasks]
    work = [
        (index, start, stop)
        for index, (_, _, ens, _) in enumerate(resolved)
        for start, stop in _chunk_bounds(ens)
    ]
    logger.info("running %d ensembles as %d chunks on %d workers", len(resolved), len(work), n_jobs)
    summaries = Parallel(n_jobs=n_jobs)(
        delayed(_run_chunk)(resolved[i][0], resolved[i][1], resolved[i][2].seed, start, stop, resolved[i][3])
        for i, start, stop in work
    )
    results = []
    for index, (spec, T, ens, cfg) in enumerate(resolved):
        chunks = [s for (i, _, _), s in zip(work, summaries) if i == index]
        results.append(_reduce(spec, T, ens, cfg, chunks))
    return results


def run_ensemble(spec: ModelSpec, T: float, ens: EnsembleConfig, cfg: IntegratorConfig,
                 n_jobs: int = 1) -> EnsembleResult:
    """Propagate trajectories 0..n_traj-1 sampled from (seed, k) streams"""
    return run_ensembles([(spec, T, ens, cfg)], n_jobs=n_jobs)[0]
