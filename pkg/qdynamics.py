"""Bath-decoupled wavepacket propagation of the particle on the corrugated Morse surface.

Split-operator (Strang) propagation on a periodic 2D grid: half potential step,
full kinetic step in momentum space, half potential step. An optional polynomial
absorbing cap at the top of the z range removes outgoing flux before it wraps.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import signal

from errors import ConfigError, GridError, NormDriftError
from model import ModelSpec, MorseParams, corrugated_V, well_frequency
from observables import Histogram, channel_histogram
from units import HBAR, Dimension, atomic

logger = logging.getLogger(__name__)

NORM_TOLERANCE_PER_1000 = 1e-8
SUPPORT_TOLERANCE = 1e-12
MOMENTUM_MARGIN = 1.0
SMOOTH_PRIMES = (2, 3, 5, 7)


def is_smooth(n: int) -> bool:
    """True when n has no prime factor above 7"""
    if n < 1:
        return False
    for prime in SMOOTH_PRIMES:
        while n % prime == 0:
            n //= prime
    return n == 1


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid; rows are z, columns are x"""
    z_min: float
    z_max: float
    n_z: int
    x_min: float
    x_max: float
    n_x: int

    def __post_init__(self):
        if not self.z_max > self.z_min or not self.x_max > self.x_min:
            raise GridError("grid extents must be increasing")
        for name, n in (("n_z", self.n_z), ("n_x", self.n_x)):
            if not is_smooth(n):
                raise GridError(f"{name}={n} must be a product of primes up to 7")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_z, self.n_x

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_z

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def cell(self) -> float:
        """Quadrature weight; a single x column is a 1D slice with unit weight"""
        return self.dz * (self.dx if self.n_x > 1 else 1.0)

    @property
    def z(self) -> np.ndarray:
        return self.z_min + np.arange(self.n_z) * self.dz

    @property
    def x(self) -> np.ndarray:
        if self.n_x == 1:
            return np.array([0.5 * (self.x_min + self.x_max)])
        return self.x_min + np.arange(self.n_x) * self.dx

    @property
    def pz(self) -> np.ndarray:
        return 2.0 * np.pi * HBAR * np.fft.fftfreq(self.n_z, self.dz)

    @property
    def px(self) -> np.ndarray:
        return 2.0 * np.pi * HBAR * np.fft.fftfreq(self.n_x, self.dx)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.z[:, None], self.x[None, :]

    def kinetic(self, M: float) -> np.ndarray:
        return (self.pz[:, None] ** 2 + self.px[None, :] ** 2) / (2.0 * M)

    def periods(self, l: float) -> int:
        return max(1, int(round((self.x_max - self.x_min) / l)))


def build_grid(spec: ModelSpec, z_min: float, z_max: float, n_z: int,
               x_min: float, x_max: float, n_x: int) -> Grid2D:
    """Grid whose x extent is stretched to a whole number of lattice periods"""
    l = spec.corrugation.l
    periods = max(1, int(round((x_max - x_min) / l)))
    centre = 0.5 * (x_min + x_max)
    half = 0.5 * periods * l
    if not np.isclose(2.0 * half, x_max - x_min, rtol=1e-12):
        logger.info("x extent adjusted from %.6g to %.6g bohr (%d lattice periods)",
                    x_max - x_min, 2.0 * half, periods)
    grid = Grid2D(z_min, z_max, n_z, centre - half, centre + half, n_x)

    needed = MOMENTUM_MARGIN * np.sqrt(2.0 * spec.M * (spec.Ei + spec.morse.V0))
    p_max_z = np.pi * HBAR / grid.dz
    if p_max_z < needed:
        raise GridError(f"z momentum range {p_max_z:.4g} a.u. is below the required {needed:.4g}; "
                        "increase n_z")
    if n_x > 1 and np.pi * HBAR / grid.dx < needed:
        raise GridError(f"x momentum range {np.pi * HBAR / grid.dx:.4g} a.u. is below the required "
                        f"{needed:.4g}; increase n_x")
    return grid


@dataclass
class WaveState:
    amplitudes: np.ndarray
    grid: Grid2D
    time: float = 0.0

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell)


@dataclass(frozen=True)
class Absorber:
    """Polynomial cap W(z) = strength * s**power over the top `length` of the z range"""
    length: float
    strength: float
    power: int = 2

    def profile(self, grid: Grid2D) -> np.ndarray:
        s = np.clip((grid.z - (grid.z_max - self.length)) / self.length, 0.0, 1.0)
        return (self.strength * s ** self.power)[:, None]


def gaussian_packet(grid: Grid2D, z_c: float, x_c: float, width_z: float, width_x: float,
                    p_z: float = 0.0, p_x: float = 0.0) -> WaveState:
    """Normalised product Gaussian; widths are standard deviations of |psi|^2"""
    z, x = grid.mesh()
    psi_z = np.exp(-((z - z_c) ** 2) / (4.0 * width_z ** 2) + 1j * p_z * (z - z_c) / HBAR)
    if grid.n_x == 1:
        psi_x = np.ones_like(x, dtype=complex)
    else:
        psi_x = np.exp(-((x - x_c) ** 2) / (4.0 * width_x ** 2) + 1j * p_x * (x - x_c) / HBAR)
    ws = WaveState(psi_z * psi_x, grid)
    ws.amplitudes /= np.sqrt(ws.norm)
    return ws


def check_support(ws: WaveState):
    density = np.abs(ws.amplitudes) ** 2
    peak = density.max()
    edges = [density[0], density[-1]]
    if ws.grid.n_x > 1:
        edges += [density[:, 0], density[:, -1]]
    worst = max(float(e.max()) for e in edges) / peak
    if worst >= SUPPORT_TOLERANCE:
        raise GridError(f"wavepacket density at the grid edge is {worst:.2e} of its peak "
                        f"(must stay below {SUPPORT_TOLERANCE:.0e})")


def initial_packet(spec: ModelSpec, grid: Grid2D) -> WaveState:
    """Incident packet centred at (z_i, 0) with momentum (p_zi, 0)"""
    if not grid.z_min < spec.zi < grid.z_max:
        raise GridError(f"initial height {spec.zi:.6g} bohr lies outside the z grid")
    ws = gaussian_packet(grid, spec.zi, 0.0, spec.dz, spec.dx, p_z=spec.pzi, p_x=0.0)
    check_support(ws)
    return ws


def grid_potential(spec: ModelSpec, grid: Grid2D) -> np.ndarray:
    z, x = grid.mesh()
    return np.broadcast_to(corrugated_V(spec, z, x), grid.shape).copy()


class WavepacketPropagator:
    """Strang-split short-time propagator exp(-i H dt / hbar)"""

    def __init__(self, spec: ModelSpec, grid: Grid2D, dt: float,
                 absorber: Optional[Absorber] = None,
                 potential: Optional[np.ndarray] = None,
                 workers: Optional[int] = None):
        self.spec = spec
        self.grid = grid
        self.absorber = absorber
        self.workers = workers
        self.V = grid_potential(spec, grid) if potential is None else np.asarray(potential, dtype=float)
        if self.V.shape != grid.shape:
            raise GridError(f"potential shape {self.V.shape} does not match the grid {grid.shape}")
        self._kinetic_energy = grid.kinetic(spec.M)
        self.set_timestep(dt)

    def set_timestep(self, dt: float) -> None:
        if self.absorber is not None and dt < 0:
            raise ConfigError("backward propagation requires the absorbing cap to be off",
                              field="QUANTUM_CAP_LENGTH")
        self.dt = dt
        half = np.exp(-0.5j * dt * self.V / HBAR)
        if self.absorber is not None:
            half = half * np.exp(-0.5 * dt * self.absorber.profile(self.grid) / HBAR)
        self._half_potential = half
        self._kinetic = np.exp(-1j * dt * self._kinetic_energy / HBAR)

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        psi = psi * self._half_potential
        psi = sfft.ifft2(sfft.fft2(psi, workers=self.workers) * self._kinetic, workers=self.workers)
        return psi * self._half_potential

    def propagate(self, ws: WaveState, n_steps: int) -> WaveState:
        norm0 = ws.norm
        psi = ws.amplitudes
        for _ in range(n_steps):
            psi = self(psi)
        out = WaveState(psi, ws.grid, ws.time + n_steps * self.dt)
        drift = abs(out.norm - norm0)
        if self.absorber is None:
            tolerance = NORM_TOLERANCE_PER_1000 * max(1.0, n_steps / 1000.0)
            if drift > tolerance:
                raise NormDriftError(
                    f"norm changed by {drift:.3e} over {n_steps} steps (tolerance {tolerance:.1e})"
                )
        else:
            logger.debug("absorbed mass %.3e over %d steps", drift, n_steps)
        return out


def propagate(ws: WaveState, spec: ModelSpec, dt: float, n_steps: int,
              absorber: Optional[Absorber] = None,
              potential: Optional[np.ndarray] = None) -> WaveState:
    return WavepacketPropagator(spec, ws.grid, dt, absorber, potential).propagate(ws, n_steps)


# Position-space observables

def _outgoing(ws: WaveState, z0: float) -> np.ndarray:
    return (ws.grid.z >= z0)[:, None]


def quantum_trapping(ws: WaveState, z0: float) -> float:
    """1 - <Theta(z >= z0)> / <psi|psi>"""
    density = np.abs(ws.amplitudes) ** 2
    total = density.sum()
    out = np.where(_outgoing(ws, z0), density, 0.0).sum()
    return float(1.0 - out / total)


def apply_hamiltonian(ws: WaveState, spec: ModelSpec, potential: np.ndarray) -> np.ndarray:
    kinetic = sfft.ifft2(sfft.fft2(ws.amplitudes) * ws.grid.kinetic(spec.M))
    return kinetic + potential * ws.amplitudes


def energy_expectation(ws: WaveState, spec: ModelSpec, potential: Optional[np.ndarray] = None) -> float:
    if potential is None:
        potential = grid_potential(spec, ws.grid)
    h_psi = apply_hamiltonian(ws, spec, potential)
    return float(np.real(np.vdot(ws.amplitudes, h_psi)) / np.vdot(ws.amplitudes, ws.amplitudes).real)


@dataclass
class EscapedEnergy:
    """Projected energy in the symmetrised ordering, and the gap between the two orderings"""
    value: float
    ordering_gap: float


def quantum_escaped_energy(ws: WaveState, spec: ModelSpec, z0: float,
                           potential: Optional[np.ndarray] = None) -> EscapedEnergy:
    """<psi| (H Theta + Theta H)/2 |psi> / <psi|psi> with Theta the z >= z0 projector"""
    if potential is None:
        potential = grid_potential(spec, ws.grid)
    h_psi = apply_hamiltonian(ws, spec, potential)
    projected = np.where(_outgoing(ws, z0), ws.amplitudes, 0.0)
    norm = np.vdot(ws.amplitudes, ws.amplitudes).real
    overlap = np.vdot(projected, h_psi)
    return EscapedEnergy(value=float(overlap.real / norm), ordering_gap=float(2.0 * abs(overlap.imag) / norm))


# Momentum-space analysis

@dataclass
class MomentumAnalysis:
    pz: np.ndarray
    px: np.ndarray
    density: np.ndarray
    px_marginal: np.ndarray
    channels: np.ndarray
    rho: np.ndarray
    energy: np.ndarray
    escaped_mass: float


def bragg_channels(grid: Grid2D, l: float) -> np.ndarray:
    """Diffraction channel of each FFT-ordered p_x column"""
    periods = grid.periods(l)
    j = np.rint(np.fft.fftfreq(grid.n_x) * grid.n_x).astype(np.int64)
    return (2 * j + periods) // (2 * periods)


def momentum_analysis(ws: WaveState, spec: ModelSpec, z0: Optional[float] = None) -> MomentumAnalysis:
    """Momentum density of the part of psi beyond z0, with channel populations and energies"""
    z0 = spec.z0 if z0 is None else z0
    grid = ws.grid
    outgoing = np.where(_outgoing(ws, z0), ws.amplitudes, 0.0)
    escaped_mass = float(np.sum(np.abs(outgoing) ** 2) * grid.cell)
    prob = np.abs(sfft.fft2(outgoing)) ** 2
    total = prob.sum()
    if total > 0:
        prob = prob / total

    energy_grid = grid.kinetic(spec.M)
    column_mass = prob.sum(axis=0)
    column_energy = (prob * energy_grid).sum(axis=0)
    chan = bragg_channels(grid, spec.corrugation.l)
    lo = int(chan.min())
    mass = np.bincount(chan - lo, weights=column_mass)
    weighted = np.bincount(chan - lo, weights=column_energy)
    with np.errstate(invalid="ignore", divide="ignore"):
        energy = np.where(mass > 0, weighted / mass, np.nan)

    return MomentumAnalysis(
        pz=np.fft.fftshift(grid.pz),
        px=np.fft.fftshift(grid.px),
        density=np.fft.fftshift(prob),
        px_marginal=np.fft.fftshift(column_mass),
        channels=np.arange(lo, lo + len(mass)),
        rho=mass,
        energy=energy,
        escaped_mass=escaped_mass,
    )


def diffraction_peaks(analysis: MomentumAnalysis, l: float, rel_height: float = 1e-3) -> np.ndarray:
    """Local maxima of the escaped p_x marginal in units of 2 pi hbar / l"""
    marginal = np.concatenate([[0.0], analysis.px_marginal, [0.0]])
    if not marginal.max() > 0:
        return np.array([])
    idx, _ = signal.find_peaks(marginal, height=rel_height * marginal.max())
    return analysis.px[idx - 1] * l / (2.0 * np.pi * HBAR)


def quantum_angular_distribution(analysis: MomentumAnalysis, spec: ModelSpec,
                                 bin_width: float = 0.1, cutoff: float = 1e-14) -> Histogram:
    """Outgoing momentum density pushed through the elastic angle-to-n map"""
    pz = analysis.pz[:, None]
    px = analysis.px[None, :]
    weights = analysis.density
    keep = weights > cutoff * weights.max()
    theta = np.arctan2(np.broadcast_to(px, weights.shape), np.abs(np.broadcast_to(pz, weights.shape)))
    p_in = np.sqrt(2.0 * spec.M * spec.Ei)
    n_theta = spec.corrugation.l * p_in * np.sin(theta) / (2.0 * np.pi * HBAR)
    hist = channel_histogram(n_theta[keep], bin_width, weights=weights[keep])
    hist.stderr = np.zeros_like(hist.counts)
    return hist


# Morse spectrum

def morse_levels(morse: MorseParams, M: float) -> np.ndarray:
    """Bound levels hbar w0 (v+1/2) - (hbar w0 (v+1/2))^2 / (4 V0) - V0"""
    w0 = well_frequency(morse, M)
    top = np.sqrt(2.0 * M * morse.V0) / (morse.alpha * HBAR) - 0.5
    v = np.arange(int(np.ceil(top)))
    quanta = HBAR * w0 * (v + 0.5)
    return quanta - quanta ** 2 / (4.0 * morse.V0) - morse.V0


def autocorrelation(propagator: WavepacketPropagator, ws: WaveState, n_steps: int) -> np.ndarray:
    """C(k dt) = <psi(0)|psi(k dt)> for k = 0..n_steps"""
    psi0 = ws.amplitudes
    psi = psi0
    c = np.empty(n_steps + 1, dtype=complex)
    c[0] = np.vdot(psi0, psi) * ws.grid.cell
    for k in range(1, n_steps + 1):
        psi = propagator(psi)
        c[k] = np.vdot(psi0, psi) * ws.grid.cell
    return c


def autocorrelation_spectrum(c: np.ndarray, dt: float, pad_factor: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """Half-Hann windowed, zero-padded transform of C(t); returns ascending energies and intensity"""
    n = len(c)
    window = 0.5 * (1.0 + np.cos(np.pi * np.arange(n) / n))
    size = pad_factor * n
    spectrum = np.fft.ifft(c * window, size) * size * dt
    energies = 2.0 * np.pi * HBAR * np.fft.fftfreq(size, dt)
    order = np.argsort(energies)
    return energies[order], spectrum.real[order]


def spectrum_peaks(energies: np.ndarray, intensity: np.ndarray, rel_height: float = 0.01,
                   e_max: Optional[float] = 0.0) -> np.ndarray:
    """Energies of spectral maxima above rel_height of the strongest, optionally below e_max"""
    idx, _ = signal.find_peaks(intensity, height=rel_height * intensity.max())
    peaks = energies[idx]
    if e_max is not None:
        peaks = peaks[peaks < e_max]
    return np.sort(peaks)


def spectral_resolution(dt: float, n_steps: int) -> float:
    return 2.0 * np.pi * HBAR / (dt * n_steps)


# Scattering run

@dataclass(frozen=True)
class QuantumConfig:
    dt: float = atomic(1.0, Dimension.TIME, "fs")
    t_final: float = atomic(60.0, Dimension.TIME, "ps")
    record_stride: int = 100
    cap_length: float = atomic(100.0, Dimension.LENGTH, "bohr")
    cap_strength: float = atomic(5.0, Dimension.ENERGY, "meV")
    cap_power: int = 2
    snapshot_times: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("quantum time step must be positive", field="QUANTUM_DT")
        if not self.t_final > 0:
            raise ConfigError("quantum final time must be positive", field="QUANTUM_T_FINAL")
        if self.record_stride < 1:
            raise ConfigError("record stride must be at least 1", field="QUANTUM_RECORD_STRIDE")
        if self.cap_length < 0 or self.cap_strength < 0:
            raise ConfigError("absorbing cap length and strength must be non-negative",
                              field="QUANTUM_CAP_LENGTH")
        for t in self.snapshot_times:
            if not 0 <= t <= self.t_final:
                raise ConfigError("snapshot times must lie within the run", field="QUANTUM_SNAPSHOT_TIMES")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def absorber(self) -> Optional[Absorber]:
        if self.cap_length == 0 or self.cap_strength == 0:
            return None
        return Absorber(self.cap_length, self.cap_strength, self.cap_power)

    def halved(self) -> "QuantumConfig":
        return replace(self, dt=0.5 * self.dt, record_stride=2 * self.record_stride)

    def record_times(self) -> np.ndarray:
        return np.arange(self.n_steps // self.record_stride + 1) * (self.record_stride * self.dt)


@dataclass
class QuantumRun:
    times: np.ndarray
    trapping: np.ndarray
    escaped_energy: np.ndarray
    ordering_gap: np.ndarray
    norm: np.ndarray
    analysis: MomentumAnalysis
    final: WaveState
    initial_energy: float
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def absorbed(self) -> float:
        return float(self.norm[0] - self.norm[-1])


def run_wavepacket(spec: ModelSpec, grid: Grid2D, cfg: QuantumConfig,
                   workers: Optional[int] = None) -> QuantumRun:
    """Propagate the incident packet and record trapping and escaped energy along the way"""
    ws = initial_packet(spec, grid)
    prop = WavepacketPropagator(spec, grid, cfg.dt, cfg.absorber, workers=workers)
    snapshot_steps = {int(round(t / cfg.dt)): t for t in cfg.snapshot_times}
    times = cfg.record_times()
    trapping, energy, gap, norm = (np.zeros(len(times)) for _ in range(4))
    snapshots: Dict[float, np.ndarray] = {}

    def record(r: int, state: WaveState):
        trapping[r] = quantum_trapping(state, spec.z0)
        e = quantum_escaped_energy(state, spec, spec.z0, potential=prop.V)
        energy[r] = e.value
        gap[r] = e.ordering_gap
        norm[r] = state.norm

    initial_energy = energy_expectation(ws, spec, prop.V)
    logger.info("wavepacket run: %d steps on a %dx%d grid, E_i=%.4g Ha", cfg.n_steps, grid.n_z, grid.n_x, spec.Ei)
    record(0, ws)
    if 0 in snapshot_steps:
        snapshots[snapshot_steps[0]] = np.abs(ws.amplitudes) ** 2
    psi = ws.amplitudes
    for i in range(1, cfg.n_steps + 1):
        psi = prop(psi)
        if i % cfg.record_stride == 0 or i in snapshot_steps:
            state = WaveState(psi, grid, i * cfg.dt)
            if i % cfg.record_stride == 0:
                record(i // cfg.record_stride, state)
            if i in snapshot_steps:
                snapshots[snapshot_steps[i]] = np.abs(psi) ** 2
    final = WaveState(psi, grid, cfg.n_steps * cfg.dt)

    if cfg.absorber is None:
        tolerance = NORM_TOLERANCE_PER_1000 * max(1.0, cfg.n_steps / 1000.0)
        drift = abs(final.norm - norm[0])
        if drift > tolerance:
            raise NormDriftError(f"norm changed by {drift:.3e} over {cfg.n_steps} steps")
    else:
        logger.info("absorbing cap removed %.3e of the norm", norm[0] - final.norm)
    logger.info("max projector ordering gap %.3e Ha", float(gap.max()))

    return QuantumRun(
        times=times,
        trapping=trapping,
        escaped_energy=energy,
        ordering_gap=gap,
        norm=norm,
        analysis=momentum_analysis(final, spec),
        final=final,
        initial_energy=initial_energy,
        snapshots=snapshots,
    )
