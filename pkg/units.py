"""Unit conversion between user-facing units and Hartree atomic units.

This is the only module allowed to hold numeric conversion factors. Internally
hbar = 1, the electron mass is 1 and energies are in Hartree. Temperatures are
carried internally as k_B*T in Hartree and frequencies as angular frequencies
in inverse atomic time units (numerically equal to hbar*omega in Hartree).
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from errors import ConfigError

# CODATA 2018 recommended values
CONSTANTS: Dict[str, float] = {
    "hartree_in_ev": 27.211386245988,
    "bohr_in_angstrom": 0.529177210903,
    "au_time_in_fs": 0.024188843265857,
    "amu_in_electron_masses": 1822.888486209,
    "boltzmann_in_ev_per_k": 8.617333262e-5,
}

HBAR = 1.0


class Dimension(str, Enum):
    ENERGY = "energy"
    LENGTH = "length"
    INVERSE_LENGTH = "inverse_length"
    MASS = "mass"
    TIME = "time"
    FREQUENCY = "frequency"
    TEMPERATURE = "temperature"
    MOMENTUM = "momentum"
    DIMENSIONLESS = "dimensionless"


def _unit_table() -> Dict[Dimension, Dict[str, float]]:
    """Atomic-unit value of one user unit, per dimension; the first entry is the default unit"""
    hartree_ev = CONSTANTS["hartree_in_ev"]
    bohr_a = CONSTANTS["bohr_in_angstrom"]
    au_fs = CONSTANTS["au_time_in_fs"]
    k_b = CONSTANTS["boltzmann_in_ev_per_k"] / hartree_ev
    mev = 1e-3 / hartree_ev
    return {
        Dimension.ENERGY: {"meV": mev, "eV": 1.0 / hartree_ev, "hartree": 1.0, "au": 1.0},
        Dimension.LENGTH: {"angstrom": 1.0 / bohr_a, "bohr": 1.0, "au": 1.0},
        Dimension.INVERSE_LENGTH: {"per_angstrom": bohr_a, "per_bohr": 1.0, "au": 1.0},
        Dimension.MASS: {"amu": CONSTANTS["amu_in_electron_masses"], "me": 1.0, "au": 1.0},
        Dimension.TIME: {"fs": 1.0 / au_fs, "ps": 1e3 / au_fs, "au": 1.0},
        Dimension.FREQUENCY: {"meV": mev, "per_fs": au_fs, "au": 1.0},
        Dimension.TEMPERATURE: {"K": k_b},
        Dimension.MOMENTUM: {"hbar_per_angstrom": bohr_a, "au": 1.0},
        Dimension.DIMENSIONLESS: {"": 1.0},
    }


UNITS = _unit_table()

# Accepted spellings in manifests
UNIT_ALIASES: Dict[str, str] = {
    "a": "angstrom",
    "å": "angstrom",
    "ang": "angstrom",
    "angstrom": "angstrom",
    "bohr": "bohr",
    "a.u.": "au",
    "au": "au",
    "mev": "meV",
    "ev": "eV",
    "hartree": "hartree",
    "ha": "hartree",
    "amu": "amu",
    "u": "amu",
    "me": "me",
    "fs": "fs",
    "ps": "ps",
    "k": "K",
    "1/a": "per_angstrom",
    "1/angstrom": "per_angstrom",
    "per_angstrom": "per_angstrom",
    "1/bohr": "per_bohr",
    "per_bohr": "per_bohr",
    "1/fs": "per_fs",
    "per_fs": "per_fs",
    "hbar/a": "hbar_per_angstrom",
    "hbar_per_angstrom": "hbar_per_angstrom",
}


@dataclass(frozen=True)
class Quantity:
    """A value in user units tagged with its physical dimension"""
    value: float
    dimension: Dimension
    unit: Optional[str] = None


def _as_dimension(dimension) -> Dimension:
    try:
        return Dimension(dimension)
    except ValueError:
        raise ConfigError(f"unknown dimension '{dimension}'") from None


def default_unit(dimension) -> str:
    """User-facing unit used when none is given"""
    return next(iter(UNITS[_as_dimension(dimension)]))


def unit_factor(dimension, unit: Optional[str] = None) -> float:
    """Atomic-unit size of one `unit` of `dimension`"""
    dim = _as_dimension(dimension)
    table = UNITS[dim]
    if unit is None:
        unit = default_unit(dim)
    canonical = UNIT_ALIASES.get(unit.lower(), unit) if unit else unit
    if canonical not in table:
        raise ConfigError(
            f"unit '{unit}' is not valid for {dim.value} (use one of: {', '.join(table)})"
        )
    return table[canonical]


def to_atomic(q: Quantity) -> float:
    """Convert a user-unit quantity to Hartree atomic units"""
    return q.value * unit_factor(q.dimension, q.unit)


def from_atomic(value, dimension, unit: Optional[str] = None) -> Quantity:
    """Convert an atomic-unit value back to user units"""
    dim = _as_dimension(dimension)
    if not np.all(np.isfinite(value)):
        raise ConfigError(f"cannot convert non-finite {dim.value} value")
    if unit is None:
        unit = default_unit(dim)
    return Quantity(value / unit_factor(dim, unit), dim, unit)


def atomic(value: float, dimension, unit: Optional[str] = None) -> float:
    """Shorthand for to_atomic(Quantity(value, dimension, unit))"""
    return to_atomic(Quantity(value, _as_dimension(dimension), unit))


def user(value, dimension, unit: Optional[str] = None):
    """Shorthand for from_atomic(...).value; works elementwise on arrays"""
    return from_atomic(value, dimension, unit).value


def boltzmann() -> float:
    """k_B in Hartree per kelvin"""
    return unit_factor(Dimension.TEMPERATURE, "K")
