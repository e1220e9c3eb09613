"""Initial phase-space ensembles from the Wigner densities of the packet and the thermal bath."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError
from model import BathSpec, ModelSpec, PhasePoint
from units import HBAR


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int
    seed: int
    chunk_size: int = 1024

    def __post_init__(self):
        if self.n_traj < 1:
            raise ConfigError("ensemble needs at least one trajectory", field="ENSEMBLE_N_TRAJ")
        if self.chunk_size < 1:
            raise ConfigError("chunk size must be positive", field="ENSEMBLE_CHUNK_SIZE")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits", field="ENSEMBLE_SEED")


def trajectory_rng(seed: int, k: int) -> np.random.Generator:
    """Counter-based stream owned by trajectory k; a pure function of (seed, k)"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(k,))
    return np.random.Generator(np.random.Philox(sequence))


def bath_nu(bath: BathSpec, T: float) -> np.ndarray:
    """nu_j = tanh(hbar w_j / 2 k_B T); exactly 1 at T = 0. T is k_B*T in Hartree"""
    if T < 0:
        raise ConfigError("temperature must be non-negative", field="SWEEP_T")
    if T == 0:
        return np.ones(bath.N)
    return np.tanh(HBAR * bath.omegas / (2.0 * T))


def sample_system(spec: ModelSpec, rng: np.random.Generator,
                  size: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw (z, x, p_z, p_x) from the Wigner transform of the initial Gaussian packet"""
    z = rng.normal(spec.zi, spec.dz, size)
    x = rng.normal(0.0, spec.dx, size)
    pz = rng.normal(spec.pzi, HBAR / (2.0 * spec.dz), size)
    px = rng.normal(0.0, HBAR / (2.0 * spec.dx), size)
    return z, x, pz, px


def sample_bath(bath: BathSpec, T: float, rng: np.random.Generator,
                size: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Draw mass-weighted bath coordinates and momenta from the thermal Wigner density"""
    nu = bath_nu(bath, T)
    shape = (bath.N,) if size is None else (size, bath.N)
    sigma_x = np.sqrt(HBAR / (2.0 * bath.omegas * nu))
    sigma_p = np.sqrt(HBAR * bath.omegas / (2.0 * nu))
    bath_x = rng.standard_normal(shape) * sigma_x
    bath_p = rng.standard_normal(shape) * sigma_p
    return bath_x, bath_p


def sample_point(spec: ModelSpec, T: float, k: int, seed: int) -> PhasePoint:
    """Initial state of trajectory k; the uncoupled bath distribution is used verbatim"""
    rng = trajectory_rng(seed, k)
    z, x, pz, px = sample_system(spec, rng)
    bath_x, bath_p = sample_bath(spec.bath, T, rng)
    return PhasePoint(np.float64(z), np.float64(x), np.float64(pz), np.float64(px), bath_x, bath_p)


def sample_batch(spec: ModelSpec, T: float, indices: Sequence[int], seed: int) -> PhasePoint:
    """Stack sample_point over trajectory indices into one batched PhasePoint"""
    points = [sample_point(spec, T, int(k), seed) for k in indices]
    return PhasePoint(
        z=np.array([p.z for p in points]),
        x=np.array([p.x for p in points]),
        pz=np.array([p.pz for p in points]),
        px=np.array([p.px for p in points]),
        bath_x=np.array([p.bath_x for p in points]).reshape(len(points), spec.bath.N),
        bath_p=np.array([p.bath_p for p in points]).reshape(len(points), spec.bath.N),
    )


def wigner_variances(spec: ModelSpec, T: float) -> dict:
    """Analytic marginal variances of every sampled coordinate"""
    nu = bath_nu(spec.bath, T)
    return {
        "z": spec.dz ** 2,
        "x": spec.dx ** 2,
        "pz": (HBAR / (2.0 * spec.dz)) ** 2,
        "px": (HBAR / (2.0 * spec.dx)) ** 2,
        "bath_x": HBAR / (2.0 * spec.bath.omegas * nu),
        "bath_p": HBAR * spec.bath.omegas / (2.0 * nu),
    }
