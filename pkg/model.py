"""Potential energy surface, forces and Hamiltonian of the atom-surface model.

The particle moves in (z, x) over a Morse well with sinusoidal corrugation; its
vertical coordinate couples linearly through V'(z) to N mass-weighted harmonic
bath oscillators written in counter-term (squared-completion) form.
All quantities are in Hartree atomic units.
"""
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from errors import ConfigError, StructuralError
from units import HBAR, Dimension, atomic

logger = logging.getLogger(__name__)

WEAK_CORRUGATION_RATIO = 0.2


@dataclass(frozen=True)
class MorseParams:
    V0: float
    alpha: float

    def __post_init__(self):
        if not (self.V0 > 0 and self.alpha > 0):
            raise ConfigError("Morse V0 and alpha must both be positive", field="MODEL_V0")


@dataclass(frozen=True)
class CorrugationParams:
    h: float
    l: float

    def __post_init__(self):
        if self.l <= 0:
            raise ConfigError("lattice period must be positive", field="MODEL_LATTICE_L")
        if self.h < 0:
            raise ConfigError("corrugation amplitude must be non-negative", field="MODEL_CORRUGATION_H")
        if self.h / self.l > WEAK_CORRUGATION_RATIO:
            logger.warning(
                "corrugation h/l = %.3f exceeds %.1f; the weak-corrugation form is a poor model here",
                self.h / self.l, WEAK_CORRUGATION_RATIO,
            )


@dataclass(frozen=True, eq=False)
class BathSpec:
    """Discretized Ohmic bath"""
    N: int
    gamma_tilde: float
    omega_c: float
    omegas: np.ndarray = field(repr=False)
    couplings: np.ndarray = field(repr=False)
    gamma: float = 0.0

    def __post_init__(self):
        if len(self.omegas) != self.N or len(self.couplings) != self.N:
            raise StructuralError(f"bath arrays must have length N={self.N}")
        if self.N and (np.any(self.omegas <= 0) or np.any(np.diff(self.omegas) <= 0)):
            raise ConfigError("bath frequencies must be positive and strictly increasing")


@dataclass(frozen=True)
class ModelSpec:
    """Every physical parameter of one simulation, in atomic units"""
    morse: MorseParams
    corrugation: CorrugationParams
    M: float
    bath: BathSpec
    z0: float
    zi: float
    dz: float
    dx: float
    Ei: float
    T: float = 0.0

    def __post_init__(self):
        if self.M <= 0:
            raise ConfigError("mass must be positive", field="MODEL_MASS")
        if self.Ei <= 0:
            raise ConfigError("incident energy must be positive", field="SWEEP_EI")
        if self.T < 0:
            raise ConfigError("temperature must be non-negative", field="SWEEP_T")
        if not (self.dz > 0 and self.dx > 0):
            raise ConfigError("Gaussian widths must be positive", field="MODEL_DZ")
        if not self.zi > self.z0:
            raise ConfigError("initial height must lie beyond the dividing surface", field="MODEL_ZI")
        if abs(morse_V(self.morse, self.z0)) >= 1e-4 * self.Ei:
            raise ConfigError(
                "dividing surface z0 is inside the interaction range (|V(z0)| >= 1e-4 Ei)",
                field="MODEL_Z0",
            )

    @property
    def pzi(self) -> float:
        """Incident vertical momentum (negative: toward the surface)"""
        return -np.sqrt(2.0 * self.M * self.Ei)

    @property
    def omega0(self) -> float:
        return well_frequency(self.morse, self.M)


class PhasePoint(NamedTuple):
    """Classical state; fields may carry a leading batch axis"""
    z: np.ndarray
    x: np.ndarray
    pz: np.ndarray
    px: np.ndarray
    bath_x: np.ndarray
    bath_p: np.ndarray


class Forces(NamedTuple):
    fz: np.ndarray
    fx: np.ndarray
    f_bath: np.ndarray


def well_frequency(morse: MorseParams, M: float) -> float:
    """Harmonic frequency of the Morse well bottom, alpha*sqrt(2 V0 / M)"""
    return morse.alpha * np.sqrt(2.0 * morse.V0 / M)


# Morse potential and its derivatives

def morse_V(morse: MorseParams, z):
    e = np.exp(-morse.alpha * np.asarray(z, dtype=float))
    return morse.V0 * (1.0 - e) ** 2 - morse.V0


def morse_dV(morse: MorseParams, z):
    e = np.exp(-morse.alpha * np.asarray(z, dtype=float))
    return 2.0 * morse.V0 * morse.alpha * e * (1.0 - e)


def morse_d2V(morse: MorseParams, z):
    e = np.exp(-morse.alpha * np.asarray(z, dtype=float))
    return 2.0 * morse.V0 * morse.alpha ** 2 * e * (2.0 * e - 1.0)


def corrugated_V(spec: ModelSpec, z, x):
    """V(z) + (h/l) sin(2 pi x / l) V'(z)"""
    c = spec.corrugation
    modulation = (c.h / c.l) * np.sin(2.0 * np.pi * np.asarray(x, dtype=float) / c.l)
    return morse_V(spec.morse, z) + modulation * morse_dV(spec.morse, z)


def system_energy(spec: ModelSpec, z, x, pz, px):
    """Kinetic plus corrugated potential energy of the particle alone"""
    return (np.asarray(pz) ** 2 + np.asarray(px) ** 2) / (2.0 * spec.M) + corrugated_V(spec, z, x)


def _check_bath_shape(spec: ModelSpec, p: PhasePoint):
    n = spec.bath.N
    if np.shape(p.bath_x)[-1:] != (n,) or np.shape(p.bath_p)[-1:] != (n,):
        raise StructuralError(
            f"phase point carries bath arrays of shape {np.shape(p.bath_x)}, "
            f"{np.shape(p.bath_p)}; the bath has N={n}"
        )


def _displacement_factor(spec: ModelSpec) -> np.ndarray:
    """c_j / (sqrt(M) w_j^2), the equilibrium shift of mode j per unit V'(z)"""
    b = spec.bath
    return b.couplings / (np.sqrt(spec.M) * b.omegas ** 2)


def bath_mode_energies(spec: ModelSpec, p: PhasePoint) -> np.ndarray:
    """Per-mode energy 1/2 [p_j^2 + w_j^2 (x_j - g_j V'(z))^2]"""
    _check_bath_shape(spec, p)
    w2 = spec.bath.omegas ** 2
    shift = _displacement_factor(spec) * np.expand_dims(morse_dV(spec.morse, p.z), -1)
    return 0.5 * (np.asarray(p.bath_p) ** 2 + w2 * (np.asarray(p.bath_x) - shift) ** 2)


def total_energy(spec: ModelSpec, p: PhasePoint):
    """Full Hamiltonian including the bath and its coupling"""
    return system_energy(spec, p.z, p.x, p.pz, p.px) + bath_mode_energies(spec, p).sum(axis=-1)


def forces(spec: ModelSpec, p: PhasePoint) -> Forces:
    """Analytic negative gradient of total_energy"""
    _check_bath_shape(spec, p)
    c = spec.corrugation
    k = 2.0 * np.pi / c.l
    z = np.asarray(p.z, dtype=float)
    x = np.asarray(p.x, dtype=float)
    dV = morse_dV(spec.morse, z)
    d2V = morse_d2V(spec.morse, z)
    modulation = (c.h / c.l) * np.sin(k * x)

    g = _displacement_factor(spec)
    w2 = spec.bath.omegas ** 2
    # w_j^2 (x_j - g_j V'(z))
    stretch = w2 * (np.asarray(p.bath_x) - g * np.expand_dims(dV, -1))

    fz = -(dV + modulation * d2V) + d2V * (stretch * g).sum(axis=-1)
    fx = -(c.h / c.l) * k * np.cos(k * x) * dV
    return Forces(fz, fx, -stretch)


# Bath discretization

def build_bath(N: int, gamma_tilde: float, omega_c_factor: float, omega0: float,
               gamma: Optional[float] = None) -> BathSpec:
    """Frequencies and couplings of the discretized Ohmic bath.

    w_j = -w_c ln(1 - j/(N+1)),  c_j = sqrt(2 gamma w_j^2 w_c / (pi (N+1))),
    with w_c = omega_c_factor * omega0 and gamma = gamma_tilde * omega0 unless given.
    """
    if N < 1:
        raise ConfigError("the bath needs at least one oscillator", field="BATH_N")
    if omega_c_factor <= 0 or omega0 <= 0:
        raise ConfigError("cutoff frequency must be positive", field="BATH_OMEGA_C_FACTOR")
    if gamma_tilde < 0:
        raise ConfigError("reduced friction must be non-negative", field="BATH_GAMMA_TILDE")
    if gamma is None:
        gamma = gamma_tilde * omega0
    elif gamma < 0:
        raise ConfigError("friction must be non-negative", field="BATH_GAMMA")

    omega_c = omega_c_factor * omega0
    j = np.arange(1, N + 1, dtype=float)
    omegas = -omega_c * np.log(1.0 - j / (N + 1))
    couplings = np.sqrt(2.0 * gamma * omegas ** 2 * omega_c / (np.pi * (N + 1)))
    return BathSpec(N=N, gamma_tilde=gamma_tilde, omega_c=omega_c,
                    omegas=omegas, couplings=couplings, gamma=gamma)


def thermal_ratio(bath: BathSpec, T: float) -> np.ndarray:
    """hbar w_j / (k_B T) per mode; T is k_B*T in Hartree and must be positive"""
    if T <= 0:
        raise ConfigError("thermal ratio needs a positive temperature", field="SWEEP_T")
    return HBAR * bath.omegas / T


def default_spec(**overrides) -> ModelSpec:
    """Model with the published He/Morse parameters; keyword overrides are in atomic units"""
    params = {
        "V0": atomic(34.85, Dimension.ENERGY, "meV"),
        "alpha": atomic(0.5, Dimension.INVERSE_LENGTH, "per_angstrom"),
        "h": atomic(0.1, Dimension.LENGTH, "bohr"),
        "l": atomic(3.61, Dimension.LENGTH, "angstrom"),
        "M": atomic(4.002602, Dimension.MASS, "amu"),
        "N": 8,
        "gamma_tilde": 0.005,
        "omega_c_factor": 10.0,
        "gamma": None,
        "z0": atomic(50.0, Dimension.LENGTH, "angstrom"),
        "zi": atomic(80.0, Dimension.LENGTH, "angstrom"),
        "dz": atomic(5.0, Dimension.LENGTH, "bohr"),
        "dx": atomic(40.0, Dimension.LENGTH, "bohr"),
        "Ei": atomic(2.0, Dimension.ENERGY, "meV"),
        "T": 0.0,
    }
    unknown = set(overrides) - set(params)
    if unknown:
        raise ConfigError(f"unknown model parameters: {', '.join(sorted(unknown))}")
    params.update(overrides)

    morse = MorseParams(params["V0"], params["alpha"])
    omega0 = well_frequency(morse, params["M"])
    bath = build_bath(params["N"], params["gamma_tilde"], params["omega_c_factor"],
                      omega0, gamma=params["gamma"])
    return ModelSpec(
        morse=morse,
        corrugation=CorrugationParams(params["h"], params["l"]),
        M=params["M"],
        bath=bath,
        z0=params["z0"],
        zi=params["zi"],
        dz=params["dz"],
        dx=params["dx"],
        Ei=params["Ei"],
        T=params["T"],
    )
