import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure the modules import when the repository root is not the current directory
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from dynamics import EnsembleResult, IntegratorConfig  # noqa: E402
from model import default_spec  # noqa: E402
from sampling import EnsembleConfig  # noqa: E402
from units import Dimension, atomic  # noqa: E402


@pytest.fixture
def spec():
    return default_spec()


@pytest.fixture
def elastic_spec():
    """Flat surface, no bath coupling, dividing surface close in so runs stay short"""
    return default_spec(
        h=0.0,
        gamma_tilde=0.0,
        N=1,
        z0=atomic(30.0, Dimension.LENGTH, "angstrom"),
        zi=atomic(35.0, Dimension.LENGTH, "angstrom"),
    )


@pytest.fixture
def short_integrator():
    return IntegratorConfig(
        dt=atomic(1.0, Dimension.TIME, "fs"),
        t_final=atomic(0.2, Dimension.TIME, "ps"),
        record_stride=5,
        analysis_time=None,
        reentry_after=atomic(0.1, Dimension.TIME, "ps"),
    )


@pytest.fixture
def make_result():
    """Hand-built ensemble result with every trajectory's state at the analysis time given"""

    def build(spec, final_px, initial_px=None, final_pz=None, final_z=None, initial_energy=None):
        final_px = np.asarray(final_px, dtype=float)
        n = len(final_px)
        initial_px = np.zeros(n) if initial_px is None else np.asarray(initial_px, dtype=float)
        if final_pz is None:
            final_pz = np.full(n, np.sqrt(2.0 * spec.M * spec.Ei))
        final_pz = np.asarray(final_pz, dtype=float)
        final_z = np.full(n, spec.zi) if final_z is None else np.asarray(final_z, dtype=float)
        if initial_energy is None:
            initial_energy = (final_pz ** 2 + final_px ** 2) / (2.0 * spec.M)
        escaped = int((final_z >= spec.z0).sum())
        return EnsembleResult(
            spec=spec,
            T=0.0,
            ensemble=EnsembleConfig(n_traj=n, seed=0),
            integrator=IntegratorConfig(),
            times=np.array([0.0, 1.0]),
            n_total=n,
            n_aborted=0,
            escaped_count=np.array([n, escaped]),
            escaped_energy_sum=np.zeros(2),
            escaped_energy_sq=np.zeros(2),
            initial_px=initial_px,
            initial_energy=np.asarray(initial_energy, dtype=float),
            final_z=final_z,
            final_x=np.zeros(n),
            final_pz=final_pz,
            final_px=final_px,
            final_bath_energy=np.zeros((n, spec.bath.N)),
            max_drift=0.0,
            n_departed=0,
            n_reentered=0,
        )

    return build
