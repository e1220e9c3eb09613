"""Classical observables: escape/trapping probabilities, escaped energy, rate fits,
diffraction-number and angular distributions, and per-channel energy loss.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal, stats

from dynamics import EnsembleResult
from errors import EmptyResultError, FitDomainError, FitRangeError
from units import HBAR, Dimension, atomic, boltzmann, user
from utils.stats import BOOTSTRAP_RESAMPLES, binomial_stderr, bootstrap_rng, channel_index

logger = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 0.1
DEFAULT_FIT_WINDOW = (atomic(40.0, Dimension.TIME, "ps"), atomic(60.0, Dimension.TIME, "ps"))
MIN_FIT_POINTS = 10


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (len(self.times) == len(self.values) == len(self.stderr)):
            raise ValueError("time series columns must have equal lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time series times must be strictly increasing")


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    normalization: str = "probability"
    stderr: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.normalization not in ("probability", "density"):
            raise ValueError(f"unknown normalization '{self.normalization}'")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("histogram edges must be increasing")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def probabilities(self) -> np.ndarray:
        if self.normalization == "probability":
            return self.counts
        return self.counts * np.diff(self.edges)


@dataclass
class RateFit:
    """c * exp(-m t) fitted on a time window; m is in inverse femtoseconds"""
    c: float
    m: float
    fit_error: float
    window: Tuple[float, float]
    m_stderr: float = 0.0
    n_points: int = 0

    def to_dict(self) -> Dict:
        return {
            "c": self.c,
            "m_per_fs": self.m,
            "m_stderr_per_fs": self.m_stderr,
            "fit_error_percent": self.fit_error,
            "window_ps": [float(user(t, Dimension.TIME, "ps")) for t in self.window],
            "n_points": self.n_points,
        }


@dataclass
class ArrheniusFit:
    """ln m = ln A - E_a / (k_B T) over the non-zero temperatures"""
    slope_K: float
    intercept: float
    activation_meV: float
    slope_stderr_K: float
    temperatures_K: List[float] = field(default_factory=list)
    rates_per_fs: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "slope_K": self.slope_K,
            "slope_stderr_K": self.slope_stderr_K,
            "intercept": self.intercept,
            "activation_meV": self.activation_meV,
            "temperatures_K": self.temperatures_K,
            "rates_per_fs": self.rates_per_fs,
        }


@dataclass
class EnergyLossProfile:
    """Per-channel mean energy loss -<dE(n)>; channels with no trajectories are absent"""
    n_centers: np.ndarray
    loss: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray


# Probabilities and escaped energy

def escape_probability(ens: EnsembleResult) -> TimeSeries:
    """Fraction of trajectories with z >= z0 at each recorded time"""
    n = ens.n_valid
    p = ens.escaped_count / n
    return TimeSeries(ens.times, p, binomial_stderr(p, n))


def trapping_probability(ens: EnsembleResult) -> TimeSeries:
    escape = escape_probability(ens)
    return TimeSeries(escape.times, 1.0 - escape.values, escape.stderr)


def escaped_energy(ens: EnsembleResult) -> TimeSeries:
    """Sum over escaped trajectories of the system energy, divided by the full ensemble size.

    This is not the mean energy of the escaped particles; see escaped_energy_conditional.
    """
    n = ens.n_valid
    mean = ens.escaped_energy_sum / n
    var = np.clip(ens.escaped_energy_sq / n - mean ** 2, 0.0, None)
    return TimeSeries(ens.times, mean, np.sqrt(var / n))


def escaped_energy_conditional(ens: EnsembleResult) -> TimeSeries:
    """Mean system energy of the trajectories that are out at each time (NaN when none are)"""
    count = ens.escaped_count.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, ens.escaped_energy_sum / count, np.nan)
        var = np.clip(ens.escaped_energy_sq / count - mean ** 2, 0.0, None)
        err = np.where(count > 1, np.sqrt(var / count), np.nan)
    return TimeSeries(ens.times, mean, err)


# Rate fits

def _log_linear(t_fs: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    line = stats.linregress(t_fs, y)
    return float(line.slope), float(line.intercept)


def fit_rate(ts: TimeSeries, window: Tuple[float, float] = DEFAULT_FIT_WINDOW,
             n_boot: int = BOOTSTRAP_RESAMPLES) -> RateFit:
    """Least-squares fit of ln P(t) on the window; times and window are in atomic units"""
    lo, hi = window
    if not hi > lo:
        raise FitRangeError(f"empty fit window [{lo}, {hi}]", field="ANALYSIS_FIT_WINDOW")
    tol = 1e-9 * max(abs(hi), 1.0)
    if len(ts.times) == 0 or lo < ts.times[0] - tol or hi > ts.times[-1] + tol:
        span = (user(ts.times[0], Dimension.TIME, "ps"), user(ts.times[-1], Dimension.TIME, "ps")) \
            if len(ts.times) else (float("nan"), float("nan"))
        raise FitRangeError(
            f"fit window {user(lo, Dimension.TIME, 'ps'):.6g}-{user(hi, Dimension.TIME, 'ps'):.6g} ps "
            f"lies outside the recorded data {span[0]:.6g}-{span[1]:.6g} ps",
            field="ANALYSIS_FIT_WINDOW",
        )
    inside = (ts.times >= lo - tol) & (ts.times <= hi + tol)
    n_points = int(inside.sum())
    if n_points < MIN_FIT_POINTS:
        raise FitRangeError(
            f"fit window holds {n_points} samples; at least {MIN_FIT_POINTS} are needed",
            field="ANALYSIS_FIT_WINDOW",
        )
    values = ts.values[inside]
    if np.any(~(values > 0)):
        raise FitDomainError("trapping probability must be positive throughout the fit window")

    t_fs = user(ts.times[inside], Dimension.TIME, "fs")
    y = np.log(values)
    slope, intercept = _log_linear(t_fs, y)
    fitted = slope * t_fs + intercept
    relative = values / np.exp(fitted) - 1.0
    fit_error = 100.0 * float(np.sqrt(np.mean(relative ** 2)))

    # residual bootstrap in log space
    residuals = y - fitted
    rng = bootstrap_rng(1)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        resampled = fitted + rng.choice(residuals, size=len(residuals), replace=True)
        slopes[b] = _log_linear(t_fs, resampled)[0]
    m_stderr = float(np.std(slopes, ddof=1)) if n_boot > 1 else 0.0

    return RateFit(c=float(np.exp(intercept)), m=-slope, fit_error=fit_error,
                   window=(lo, hi), m_stderr=m_stderr, n_points=n_points)


def fit_arrhenius(temperatures_K: Sequence[float], fits: Sequence[RateFit]) -> ArrheniusFit:
    """Straight line through ln m against 1/T, skipping T = 0"""
    pairs = [(float(T), f.m) for T, f in zip(temperatures_K, fits) if T > 0 and f.m > 0]
    if len(pairs) < 2:
        raise FitRangeError("Arrhenius fit needs rates at two or more positive temperatures",
                            field="SWEEP_T")
    T = np.array([p[0] for p in pairs])
    m = np.array([p[1] for p in pairs])
    line = stats.linregress(1.0 / T, np.log(m))
    k_b_mev = float(user(boltzmann(), Dimension.ENERGY, "meV"))
    return ArrheniusFit(
        slope_K=float(line.slope),
        intercept=float(line.intercept),
        activation_meV=float(-line.slope * k_b_mev),
        slope_stderr_K=float(line.stderr),
        temperatures_K=T.tolist(),
        rates_per_fs=m.tolist(),
    )


# Diffraction channels

def diffraction_number(p_x_final, p_x_initial, l: float):
    """n = l (p_xf - p_xi) / (2 pi hbar); continuous for classical trajectories"""
    return l * (np.asarray(p_x_final) - np.asarray(p_x_initial)) / (2.0 * np.pi * HBAR)


def channel_histogram(values: np.ndarray, bin_width: float = DEFAULT_BIN_WIDTH,
                      weights: Optional[np.ndarray] = None) -> Histogram:
    """Probability histogram with bins centred on multiples of bin_width"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyResultError("no escaped trajectories to histogram")
    if weights is None:
        weights = np.ones_like(values)
    k = channel_index(values, bin_width)
    k_lo, k_hi = int(k.min()), int(k.max())
    counts = np.bincount(k - k_lo, weights=weights, minlength=k_hi - k_lo + 1)
    total = counts.sum()
    if not total > 0:
        raise EmptyResultError("histogram weights sum to zero")
    p = counts / total
    edges = (np.arange(k_lo, k_hi + 2) - 0.5) * bin_width
    return Histogram(edges=edges, counts=p, normalization="probability",
                     stderr=binomial_stderr(p, values.size))


def _escaped(ens: EnsembleResult) -> np.ndarray:
    mask = ens.final_escaped
    if not mask.any():
        raise EmptyResultError(
            f"no trajectory is beyond z0 at the analysis time ({ens.n_valid} propagated)"
        )
    return mask


def final_diffraction_numbers(ens: EnsembleResult) -> np.ndarray:
    mask = _escaped(ens)
    return diffraction_number(ens.final_px[mask], ens.initial_px[mask], ens.spec.corrugation.l)


def density_vs_n(ens: EnsembleResult, bin_width: float = DEFAULT_BIN_WIDTH) -> Histogram:
    """Distribution of the diffraction number over trajectories escaped at the analysis time"""
    return channel_histogram(final_diffraction_numbers(ens), bin_width)


def angular_distribution(ens: EnsembleResult, bin_width: float = DEFAULT_BIN_WIDTH) -> Histogram:
    """Final deflection angle arctan(p_xf/|p_zf|) mapped onto the n axis by the elastic Bragg map.

    The map uses the incident momentum |p| = sqrt(2 M E_i), so inelastic trajectories land
    at a different n than their momentum change alone would give.
    """
    mask = _escaped(ens)
    spec = ens.spec
    theta = np.arctan(ens.final_px[mask] / np.abs(ens.final_pz[mask]))
    p_in = np.sqrt(2.0 * spec.M * spec.Ei)
    l = spec.corrugation.l
    n_theta = l * (p_in * np.sin(theta) - ens.initial_px[mask]) / (2.0 * np.pi * HBAR)
    return channel_histogram(n_theta, bin_width)


def energy_loss_vs_n(ens: EnsembleResult, bin_width: float = DEFAULT_BIN_WIDTH,
                     n_boot: int = BOOTSTRAP_RESAMPLES) -> EnergyLossProfile:
    """-<dE(n)> per channel, dE = final kinetic energy minus the trajectory's initial system energy"""
    mask = _escaped(ens)
    spec = ens.spec
    n = diffraction_number(ens.final_px[mask], ens.initial_px[mask], spec.corrugation.l)
    e_final = (ens.final_pz[mask] ** 2 + ens.final_px[mask] ** 2) / (2.0 * spec.M)
    delta = e_final - ens.initial_energy[mask]

    k = channel_index(n, bin_width)
    k_lo = int(k.min())
    idx = k - k_lo
    size = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=size)
    sums = np.bincount(idx, weights=delta, minlength=size)
    present = counts > 0
    loss = -sums[present] / counts[present]

    rng = bootstrap_rng(2)
    boot = np.full((n_boot, int(present.sum())), np.nan)
    for b in range(n_boot):
        pick = rng.integers(0, len(delta), size=len(delta))
        c = np.bincount(idx[pick], minlength=size)[present]
        s = np.bincount(idx[pick], weights=delta[pick], minlength=size)[present]
        with np.errstate(invalid="ignore", divide="ignore"):
            boot[b] = np.where(c > 0, -s / c, np.nan)
    with np.errstate(invalid="ignore"):
        stderr = np.nanstd(boot, axis=0, ddof=1) if n_boot > 1 else np.zeros(len(loss))

    centers = (np.arange(size)[present] + k_lo) * bin_width
    return EnergyLossProfile(n_centers=centers, loss=loss, stderr=stderr, counts=counts[present])


# Distribution shape

def histogram_variance(hist: Histogram) -> float:
    p = hist.probabilities
    c = hist.centers
    mean = float(np.sum(p * c))
    return float(np.sum(p * c ** 2) - mean ** 2)


def histogram_peaks(hist: Histogram, n_peaks: int = 2) -> np.ndarray:
    """Centres of the n_peaks highest local maxima, in ascending order"""
    padded = np.concatenate([[0.0], hist.probabilities, [0.0]])
    idx, props = signal.find_peaks(padded, height=0.0)
    if len(idx) == 0:
        return np.array([])
    top = idx[np.argsort(props["peak_heights"])[::-1][:n_peaks]] - 1
    return np.sort(hist.centers[top])


def mean_bath_energy(ens: EnsembleResult) -> np.ndarray:
    """Mean energy held by each bath mode at the analysis time"""
    return ens.final_bath_energy.mean(axis=0)
