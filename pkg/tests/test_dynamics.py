import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dynamics import (IntegratorConfig, _ChunkSummary, _reduce, resolve_timestep, run_ensemble, run_trajectory,
                      step)
from errors import AbortThresholdError, ConfigError
from model import Forces, PhasePoint, default_spec, system_energy, total_energy
from sampling import EnsembleConfig, sample_point
from units import Dimension, atomic

FS = atomic(1.0, Dimension.TIME, "fs")
PS = atomic(1.0, Dimension.TIME, "ps")


def _at_rest(spec, z, pz=0.0):
    n = spec.bath.N
    return PhasePoint(z, 0.0, pz, 0.0, np.zeros(n), np.zeros(n))


def _bound_spec():
    return default_spec(h=0.0, gamma_tilde=0.0, N=1)


def test_reverse_step_recovers_state(spec):
    p0 = sample_point(spec, 0.0, 0, seed=3)._replace(z=5.0, x=0.3, pz=-0.4, px=0.2)
    p = p0
    for _ in range(10):
        p = step(spec, p, 0.5 * FS)
    for _ in range(10):
        p = step(spec, p, -0.5 * FS)
    for back, start in zip(p, p0):
        assert_allclose(back, start, rtol=1e-12, atol=1e-12)


def test_free_particle_moves_uniformly():
    spec = _bound_spec()

    def no_force(spec, p):
        return Forces(np.zeros_like(p.z), np.zeros_like(p.x), np.zeros_like(p.bath_x))

    p = PhasePoint(10.0, 1.0, 0.3, -0.1, np.zeros(1), np.zeros(1))
    dt = 20.0
    for _ in range(500):
        p = step(spec, p, dt, force_fn=no_force)
    t = 500 * dt
    assert p.z == pytest.approx(10.0 + 0.3 * t / spec.M, rel=1e-12)
    assert p.x == pytest.approx(1.0 - 0.1 * t / spec.M, rel=1e-12)
    assert p.pz == 0.3


def test_harmonic_period():
    spec = _bound_spec()
    k = 1e-3

    def spring(spec, p):
        return Forces(-k * np.asarray(p.z), np.zeros_like(p.x), np.zeros_like(p.bath_x))

    omega = np.sqrt(k / spec.M)
    period = 2 * np.pi / omega
    n = 1000
    p = PhasePoint(1.0, 0.0, 0.0, 0.0, np.zeros(1), np.zeros(1))
    for _ in range(n):
        p = step(spec, p, period / n, force_fn=spring)
    assert p.z == pytest.approx(1.0, rel=1e-4)
    assert abs(p.pz) < 1e-3 * np.sqrt(k * spec.M)


def test_elastic_scattering_returns_incident_energy(elastic_spec):
    spec = elastic_spec
    cfg = IntegratorConfig(dt=FS, t_final=30 * PS, record_stride=50, analysis_time=None, reentry_after=10 * PS)
    rec = run_trajectory(spec, _at_rest(spec, spec.zi, spec.pzi), cfg)
    assert not rec.aborted
    assert rec.escaped[0] and rec.escaped[-1]
    assert not rec.escaped.all()
    assert rec.energies[-1] == pytest.approx(rec.initial_energy, rel=1e-8)
    assert rec.initial_energy == pytest.approx(spec.Ei, rel=1e-5)
    assert rec.final[2] > 0


def test_bound_trajectory_conserves_energy_at_small_step():
    spec = _bound_spec()
    cfg = IntegratorConfig(dt=0.05 * FS, t_final=0.6 * PS, record_stride=20, analysis_time=None)
    rec = run_trajectory(spec, _at_rest(spec, 2.0), cfg)
    assert rec.max_drift < 1e-6
    assert not rec.escaped.any()


def test_drift_shrinks_quadratically_with_step():
    spec = _bound_spec()
    p0 = _at_rest(spec, 2.0)
    coarse = IntegratorConfig(dt=0.4 * FS, t_final=0.6 * PS, record_stride=5, analysis_time=None)
    fine = IntegratorConfig(dt=0.2 * FS, t_final=0.6 * PS, record_stride=10, analysis_time=None)
    ratio = run_trajectory(spec, p0, coarse).max_drift / run_trajectory(spec, p0, fine).max_drift
    assert 3.5 < ratio < 4.5


def test_coupled_bath_is_excited_while_total_energy_holds():
    spec = default_spec(h=0.0, gamma_tilde=0.5, N=4)
    cfg = IntegratorConfig(dt=0.5 * FS, t_final=1.0 * PS, record_stride=10, analysis_time=None)
    rec = run_trajectory(spec, _at_rest(spec, 1.5), cfg)
    assert np.all(rec.final_bath_energies > 0)
    assert rec.max_drift < 1e-3
    assert not rec.escaped.any()


def test_collision_hands_system_energy_to_a_bath_at_rest():
    # strong explicit friction; the default coupling moves ~1e-20 Ha per collision
    spec = default_spec(h=0.0, gamma=1e6, z0=atomic(30.0, Dimension.LENGTH, "angstrom"),
                        zi=atomic(35.0, Dimension.LENGTH, "angstrom"))
    cfg = IntegratorConfig(dt=FS, t_final=30 * PS, record_stride=100, analysis_time=None, reentry_after=10 * PS)
    rec = run_trajectory(spec, _at_rest(spec, spec.zi, spec.pzi), resolve_timestep(cfg, spec))
    assert not rec.aborted
    assert rec.escaped[-1] and not rec.escaped.all()
    loss = rec.initial_energy - system_energy(spec, *rec.final)
    assert loss > 0
    assert loss == pytest.approx(rec.final_bath_energies.sum(), rel=1e-2)
    assert loss < spec.Ei


def test_non_finite_trajectory_is_flagged():
    spec = _bound_spec()
    cfg = IntegratorConfig(dt=FS, t_final=0.05 * PS, record_stride=5, analysis_time=None)
    rec = run_trajectory(spec, _at_rest(spec, -3000.0), cfg)
    assert rec.aborted


def test_timestep_is_subdivided(spec):
    cfg = IntegratorConfig(dt=FS, t_final=PS, record_stride=10, analysis_time=None)
    omega_max = spec.bath.omegas.max()
    assert cfg.dt * omega_max > 0.1
    resolved = resolve_timestep(cfg, spec)
    assert resolved.dt * omega_max < 0.1
    assert resolved.record_stride * resolved.dt == pytest.approx(cfg.record_stride * cfg.dt)
    assert_allclose(resolved.record_times(), cfg.record_times())


def test_stable_timestep_is_kept():
    spec = _bound_spec()
    cfg = IntegratorConfig(dt=FS)
    assert resolve_timestep(cfg, spec) is cfg


def test_halved_integrator_keeps_the_recording_grid():
    cfg = IntegratorConfig(dt=FS, t_final=PS, record_stride=10, analysis_time=None)
    half = cfg.halved()
    assert half.dt == pytest.approx(0.5 * FS)
    assert half.n_steps == 2 * cfg.n_steps
    assert_allclose(half.record_times(), cfg.record_times())


def test_invalid_integrator():
    with pytest.raises(ConfigError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ConfigError):
        IntegratorConfig(t_final=PS, analysis_time=2 * PS)


def test_single_trajectory_ensemble_matches_run_trajectory(spec, short_integrator):
    T = atomic(80.0, Dimension.TEMPERATURE, "K")
    result = run_ensemble(spec, T, EnsembleConfig(n_traj=1, seed=9), short_integrator)
    rec = run_trajectory(spec, sample_point(spec, T, 0, 9), short_integrator)
    assert_array_equal(result.escaped_count, rec.escaped.astype(int))
    assert_array_equal(result.escaped_energy_sum, np.where(rec.escaped, rec.energies, 0.0))
    assert result.final_z[0] == rec.final[0]
    assert result.initial_energy[0] == rec.initial_energy


def test_ensemble_is_independent_of_worker_count(spec, short_integrator):
    T = atomic(80.0, Dimension.TEMPERATURE, "K")
    ens = EnsembleConfig(n_traj=24, seed=5, chunk_size=8)
    serial = run_ensemble(spec, T, ens, short_integrator, n_jobs=1)
    parallel = run_ensemble(spec, T, ens, short_integrator, n_jobs=2)
    assert_array_equal(serial.escaped_count, parallel.escaped_count)
    assert_array_equal(serial.escaped_energy_sum, parallel.escaped_energy_sum)
    assert_array_equal(serial.final_px, parallel.final_px)
    assert serial.max_drift == parallel.max_drift


def test_short_ensemble_starts_outside(spec, short_integrator):
    result = run_ensemble(spec, 0.0, EnsembleConfig(n_traj=16, seed=1), short_integrator)
    assert result.n_valid == 16
    assert_array_equal(result.escaped_count, 16)
    assert result.final_bath_energy.shape == (16, spec.bath.N)
    assert len(result.times) == len(result.escaped_count)


def test_abort_fraction_limit(spec):
    n = 9
    cfg = IntegratorConfig(dt=FS, t_final=PS, record_stride=1000, analysis_time=None)
    final = _at_rest(spec, np.full(n, spec.zi))._replace(
        x=np.zeros(n), pz=np.zeros(n), px=np.zeros(n),
        bath_x=np.zeros((n, spec.bath.N)), bath_p=np.zeros((n, spec.bath.N)),
    )
    chunk = _ChunkSummary(
        escaped_count=np.full(2, n), escaped_energy_sum=np.zeros(2), escaped_energy_sq=np.zeros(2),
        n_aborted=1, initial_px=np.zeros(n), initial_energy=np.zeros(n), final=final,
        final_bath_energy=np.zeros((n, spec.bath.N)), max_drift=0.0, n_departed=0, n_reentered=0,
    )
    with pytest.raises(AbortThresholdError) as info:
        _reduce(spec, 0.0, EnsembleConfig(n_traj=10, seed=0), cfg, [chunk])
    assert info.value.n_aborted == 1


def test_total_energy_is_batched(spec):
    p = sample_point(spec, 0.0, 1, seed=2)
    assert np.ndim(total_energy(spec, p)) == 0
