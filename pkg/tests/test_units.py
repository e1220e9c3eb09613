import re
from pathlib import Path

import numpy as np
import pytest
from scipy import constants as sc

from errors import ConfigError
from units import CONSTANTS, Dimension, Quantity, atomic, boltzmann, from_atomic, to_atomic, unit_factor, user

ROOT = Path(__file__).resolve().parents[1]


def test_energy_round_trip():
    value = atomic(2.0, Dimension.ENERGY, "meV")
    assert value == pytest.approx(2e-3 / 27.211386245988, rel=1e-15)
    assert user(value, Dimension.ENERGY, "meV") == pytest.approx(2.0, rel=1e-15)


def test_default_units():
    assert to_atomic(Quantity(1.0, Dimension.LENGTH)) == pytest.approx(1.0 / 0.529177210903, rel=1e-15)
    assert from_atomic(1.0, Dimension.LENGTH, "bohr").value == 1.0
    assert to_atomic(Quantity(1.0, Dimension.TIME, "ps")) == pytest.approx(1000.0 / 0.024188843265857)


def test_aliases_are_case_insensitive():
    assert unit_factor(Dimension.ENERGY, "MEV") == unit_factor(Dimension.ENERGY, "meV")
    assert unit_factor("length", "Å") == unit_factor(Dimension.LENGTH, "angstrom")


def test_temperature_is_carried_as_energy():
    assert atomic(300.0, Dimension.TEMPERATURE, "K") == pytest.approx(300 * 8.617333262e-5 / 27.211386245988)
    assert boltzmann() == pytest.approx(8.617333262e-5 / 27.211386245988)


def test_unknown_unit_and_dimension():
    with pytest.raises(ConfigError):
        unit_factor(Dimension.ENERGY, "parsec")
    with pytest.raises(ConfigError):
        unit_factor("viscosity", "poise")


def test_non_finite_conversion_rejected():
    with pytest.raises(ConfigError):
        from_atomic(np.inf, Dimension.ENERGY)
    with pytest.raises(ConfigError):
        user(np.array([1.0, np.nan]), Dimension.TIME, "fs")


def test_constants_match_scipy():
    pc = sc.physical_constants
    assert CONSTANTS["hartree_in_ev"] == pytest.approx(pc["Hartree energy in eV"][0], rel=1e-8)
    assert CONSTANTS["bohr_in_angstrom"] == pytest.approx(pc["Bohr radius"][0] * 1e10, rel=1e-8)
    assert CONSTANTS["au_time_in_fs"] == pytest.approx(pc["atomic unit of time"][0] * 1e15, rel=1e-8)
    assert CONSTANTS["amu_in_electron_masses"] == pytest.approx(1.0 / pc["electron mass in u"][0], rel=1e-8)
    assert CONSTANTS["boltzmann_in_ev_per_k"] == pytest.approx(pc["Boltzmann constant in eV/K"][0], rel=1e-8)


def test_no_other_module_embeds_conversion_factors():
    pattern = re.compile(r"27\.211|0\.529177|1822\.888|8\.617333|0\.0241888")
    offenders = []
    for path in ROOT.glob("**/*.py"):
        relative = path.relative_to(ROOT)
        if relative.parts[0] in ("tests", "examples") or relative.name == "units.py":
            continue
        if pattern.search(path.read_text(encoding="utf-8")):
            offenders.append(str(relative))
    assert offenders == []
