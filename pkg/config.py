"""Run manifests and process settings.

A manifest is a dotenv-style file of KEY=value lines. Physical values are written
as "<number> [unit]" in user units and converted to atomic units once, here.
Process settings (worker count, log level, default output directory) come from
the environment and never reach result files.
"""
import hashlib
import io
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from dynamics import IntegratorConfig
from errors import ConfigError
from model import ModelSpec, default_spec
from observables import MIN_FIT_POINTS
from qdynamics import QuantumConfig
from sampling import EnsembleConfig
from units import Dimension, atomic, unit_factor

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
SEED_MASK = 2 ** 63 - 1

QUANTITY = "quantity"
INTEGER = "int"
NUMBER = "float"
LIST = "list"
TEXT = "text"
OPTIONAL = "optional"

# key -> (kind, dimension, default)
KEYS: Dict[str, Tuple[str, Optional[Dimension], str]] = {
    "MODEL_V0": (QUANTITY, Dimension.ENERGY, "34.85 meV"),
    "MODEL_ALPHA": (QUANTITY, Dimension.INVERSE_LENGTH, "0.5 per_angstrom"),
    "MODEL_CORRUGATION_H": (QUANTITY, Dimension.LENGTH, "0.1 bohr"),
    "MODEL_LATTICE_L": (QUANTITY, Dimension.LENGTH, "3.61 angstrom"),
    "MODEL_MASS": (QUANTITY, Dimension.MASS, "4.002602 amu"),
    "MODEL_Z0": (QUANTITY, Dimension.LENGTH, "50 angstrom"),
    "MODEL_ZI": (QUANTITY, Dimension.LENGTH, "80 angstrom"),
    "MODEL_DZ": (QUANTITY, Dimension.LENGTH, "5 bohr"),
    "MODEL_DX": (QUANTITY, Dimension.LENGTH, "40 bohr"),
    "BATH_N": (INTEGER, None, "8"),
    "BATH_GAMMA_TILDE": (NUMBER, None, "0.005"),
    "BATH_OMEGA_C_FACTOR": (NUMBER, None, "10"),
    "BATH_GAMMA": (OPTIONAL, Dimension.FREQUENCY, ""),
    "ENSEMBLE_N_TRAJ": (INTEGER, None, "100000"),
    "ENSEMBLE_SEED": (INTEGER, None, "20150706"),
    "ENSEMBLE_CHUNK_SIZE": (INTEGER, None, "1024"),
    "INTEGRATOR_DT": (QUANTITY, Dimension.TIME, "1 fs"),
    "INTEGRATOR_T_FINAL": (QUANTITY, Dimension.TIME, "60 ps"),
    "INTEGRATOR_RECORD_STRIDE": (INTEGER, None, "10"),
    "INTEGRATOR_REENTRY_AFTER": (QUANTITY, Dimension.TIME, "40 ps"),
    "INTEGRATOR_DRIFT_BOUND": (NUMBER, None, "1e-6"),
    "ANALYSIS_TIME": (QUANTITY, Dimension.TIME, "59 ps"),
    "ANALYSIS_FIT_WINDOW": (LIST, Dimension.TIME, "40, 60 ps"),
    "ANALYSIS_BIN_WIDTH": (NUMBER, None, "0.1"),
    "ANALYSIS_FINE_BIN_WIDTH": (NUMBER, None, "0.004"),
    "GRID_Z_MIN": (QUANTITY, Dimension.LENGTH, "-10 bohr"),
    "GRID_Z_MAX": (QUANTITY, Dimension.LENGTH, "1200 bohr"),
    "GRID_N_Z": (INTEGER, None, "3072"),
    "GRID_X_MIN": (QUANTITY, Dimension.LENGTH, "-500 bohr"),
    "GRID_X_MAX": (QUANTITY, Dimension.LENGTH, "500 bohr"),
    "GRID_N_X": (INTEGER, None, "1536"),
    "QUANTUM_DT": (QUANTITY, Dimension.TIME, "1 fs"),
    "QUANTUM_T_FINAL": (QUANTITY, Dimension.TIME, "60 ps"),
    "QUANTUM_RECORD_STRIDE": (INTEGER, None, "100"),
    "QUANTUM_CAP_LENGTH": (QUANTITY, Dimension.LENGTH, "100 bohr"),
    "QUANTUM_CAP_STRENGTH": (QUANTITY, Dimension.ENERGY, "5 meV"),
    "QUANTUM_CAP_POWER": (INTEGER, None, "2"),
    "QUANTUM_SNAPSHOT_TIMES": (LIST, Dimension.TIME, ""),
    "SWEEP_EI": (LIST, Dimension.ENERGY, "2, 5 meV"),
    "SWEEP_T": (LIST, Dimension.TEMPERATURE, "0, 10, 20, 40, 80 K"),
    "OUTPUT_DIR": (TEXT, None, "results"),
    "OUTPUT_DUMP_TRAJECTORIES": (INTEGER, None, "0"),
}

# Keys that describe where results go rather than what they are
NOT_ECHOED = {"OUTPUT_DIR"}


def _number(token: str, key: str, line: Optional[int]) -> float:
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"'{token}' is not a number", field=key, line=line) from None


def _check_unit(dimension: Dimension, unit: Optional[str], key: str, line: Optional[int]):
    try:
        unit_factor(dimension, unit)
    except ConfigError as e:
        raise ConfigError(e.reason, field=key, line=line) from None


def _split_quantity(text: str, key: str, line: Optional[int]) -> Tuple[float, Optional[str]]:
    tokens = text.split()
    if not tokens or len(tokens) > 2:
        raise ConfigError(f"expected '<number> [unit]', got '{text}'", field=key, line=line)
    unit = tokens[1] if len(tokens) == 2 else None
    return _number(tokens[0], key, line), unit


def parse_value(key: str, text: str, line: Optional[int] = None):
    """Convert one manifest value to its internal form (atomic units for physical values)"""
    kind, dimension, _ = KEYS[key]
    text = (text or "").strip()
    if kind == TEXT:
        return text
    if kind == INTEGER:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"'{text}' is not an integer", field=key, line=line) from None
    if kind == NUMBER:
        return _number(text, key, line)
    if kind == OPTIONAL and not text:
        return None
    if kind in (QUANTITY, OPTIONAL):
        value, unit = _split_quantity(text, key, line)
        _check_unit(dimension, unit, key, line)
        return atomic(value, dimension, unit)

    # comma-separated list; an item without a unit takes the unit of the last item
    if not text:
        return []
    items = [_split_quantity(item, key, line) for item in text.split(",")]
    last_unit = items[-1][1]
    values = []
    for value, unit in items:
        unit = unit or last_unit
        _check_unit(dimension, unit, key, line)
        values.append(atomic(value, dimension, unit))
    return values


def _line_numbers(text: str) -> Dict[str, int]:
    """1-based line of the last assignment of each key"""
    lines = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#") or "=" not in stripped:
            continue
        if stripped.startswith("export "):
            stripped = stripped[len("export "):]
        lines[stripped.split("=", 1)[0].strip()] = number
    return lines


def in_user_units(value: float, dimension: Dimension, unit: str) -> float:
    """Back-conversion rounded to 12 significant digits, for labels and seeds"""
    return float(f"{value / unit_factor(dimension, unit):.12g}")


def job_seed(seed: int, ei_meV: float, t_K: float) -> int:
    """seed XOR blake2b(E_i, T), folded to 63 bits; stable across processes and machines"""
    digest = hashlib.blake2b(f"{ei_meV:.12g}|{t_K:.12g}".encode(), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & SEED_MASK


@dataclass
class RunManifest:
    echo: Dict[str, str]
    model: Dict[str, Any]
    ensemble: EnsembleConfig
    integrator: IntegratorConfig
    quantum: QuantumConfig
    grid: Dict[str, float]
    energies: List[float]
    temperatures_K: List[float]
    fit_window: Tuple[float, float]
    bin_width: float
    out_dir: str
    dump_trajectories: int = 0
    fine_bin_width: float = 0.004
    lines: Dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def seed(self) -> int:
        return self.ensemble.seed

    def spec(self, ei: float, t_K: float = 0.0) -> ModelSpec:
        return default_spec(**self.model, Ei=ei, T=atomic(t_K, Dimension.TEMPERATURE, "K"))

    def energies_meV(self) -> List[float]:
        return [in_user_units(ei, Dimension.ENERGY, "meV") for ei in self.energies]

    def with_seed(self, seed: int) -> "RunManifest":
        echo = dict(self.echo, ENSEMBLE_SEED=str(seed))
        return replace(self, ensemble=replace(self.ensemble, seed=seed), echo=echo)

    def with_out_dir(self, out_dir: str) -> "RunManifest":
        return replace(self, out_dir=out_dir)

    def resolved(self) -> Dict[str, Any]:
        """Atomic-unit view of every parameter, as printed by --dry-run"""
        spec = self.spec(self.energies[0], self.temperatures_K[0])
        return {
            "model": {k: v for k, v in self.model.items()},
            "omega0": spec.omega0,
            "bath_omegas": spec.bath.omegas.tolist(),
            "bath_couplings": spec.bath.couplings.tolist(),
            "bath_gamma": spec.bath.gamma,
            "energies": list(self.energies),
            "temperatures_kT": [atomic(t, Dimension.TEMPERATURE, "K") for t in self.temperatures_K],
            "ensemble": {"n_traj": self.ensemble.n_traj, "seed": self.ensemble.seed,
                         "chunk_size": self.ensemble.chunk_size},
            "integrator": {"dt": self.integrator.dt, "t_final": self.integrator.t_final,
                           "record_stride": self.integrator.record_stride,
                           "analysis_time": self.integrator.analysis_time,
                           "reentry_after": self.integrator.reentry_after},
            "quantum": {"dt": self.quantum.dt, "t_final": self.quantum.t_final,
                        "record_stride": self.quantum.record_stride,
                        "cap_length": self.quantum.cap_length,
                        "cap_strength": self.quantum.cap_strength,
                        "snapshot_times": list(self.quantum.snapshot_times)},
            "grid": dict(self.grid),
            "fit_window": list(self.fit_window),
            "bin_width": self.bin_width,
            "fine_bin_width": self.fine_bin_width,
        }


def parse_manifest(text: str = "") -> RunManifest:
    """Build a RunManifest from manifest text; missing keys take their defaults"""
    raw = dotenv_values(stream=io.StringIO(text))
    lines = _line_numbers(text)
    for key in raw:
        if key not in KEYS:
            raise ConfigError("unknown manifest key", field=key, line=lines.get(key))

    echo: Dict[str, str] = {}
    v: Dict[str, Any] = {}
    for key, (_, _, default) in KEYS.items():
        text_value = raw.get(key)
        if text_value is None:
            text_value = default
        v[key] = parse_value(key, text_value, lines.get(key))
        if key not in NOT_ECHOED:
            echo[key] = text_value.strip()

    try:
        return _assemble(v, echo, lines)
    except ConfigError as e:
        if e.line is None and e.field in lines:
            raise ConfigError(e.reason, field=e.field, line=lines[e.field]) from None
        raise


def _check_fit_window(window: List[float], integrator: IntegratorConfig):
    """The rate-fit window must lie inside the classical run and hold enough recorded samples"""
    lo, hi = window
    if not hi > lo:
        raise ConfigError("fit window must have its start before its end", field="ANALYSIS_FIT_WINDOW")
    times = integrator.record_times()
    tol = 1e-9 * max(abs(hi), 1.0)
    if lo < -tol or hi > times[-1] + tol:
        lo_ps, hi_ps, end_ps = (in_user_units(t, Dimension.TIME, "ps") for t in (lo, hi, times[-1]))
        raise ConfigError(
            f"fit window {lo_ps:g}-{hi_ps:g} ps lies outside the run 0-{end_ps:g} ps",
            field="ANALYSIS_FIT_WINDOW",
        )
    n_points = int(((times >= lo - tol) & (times <= hi + tol)).sum())
    if n_points < MIN_FIT_POINTS:
        raise ConfigError(
            f"fit window holds {n_points} recorded samples; at least {MIN_FIT_POINTS} are needed",
            field="ANALYSIS_FIT_WINDOW",
        )


def _assemble(v: Dict[str, Any], echo: Dict[str, str], lines: Dict[str, int]) -> RunManifest:
    window = v["ANALYSIS_FIT_WINDOW"]
    if len(window) != 2:
        raise ConfigError("fit window needs exactly two times", field="ANALYSIS_FIT_WINDOW")
    if not v["SWEEP_EI"]:
        raise ConfigError("at least one incident energy is required", field="SWEEP_EI")
    temperatures = [in_user_units(t, Dimension.TEMPERATURE, "K") for t in v["SWEEP_T"]] or [0.0]
    for key in ("ANALYSIS_BIN_WIDTH", "ANALYSIS_FINE_BIN_WIDTH"):
        if not v[key] > 0:
            raise ConfigError("bin width must be positive", field=key)
    if v["OUTPUT_DUMP_TRAJECTORIES"] < 0:
        raise ConfigError("trajectory dump count must be non-negative", field="OUTPUT_DUMP_TRAJECTORIES")

    model = {
        "V0": v["MODEL_V0"],
        "alpha": v["MODEL_ALPHA"],
        "h": v["MODEL_CORRUGATION_H"],
        "l": v["MODEL_LATTICE_L"],
        "M": v["MODEL_MASS"],
        "N": v["BATH_N"],
        "gamma_tilde": v["BATH_GAMMA_TILDE"],
        "omega_c_factor": v["BATH_OMEGA_C_FACTOR"],
        "gamma": v["BATH_GAMMA"],
        "z0": v["MODEL_Z0"],
        "zi": v["MODEL_ZI"],
        "dz": v["MODEL_DZ"],
        "dx": v["MODEL_DX"],
    }
    integrator = IntegratorConfig(
        dt=v["INTEGRATOR_DT"],
        t_final=v["INTEGRATOR_T_FINAL"],
        record_stride=v["INTEGRATOR_RECORD_STRIDE"],
        analysis_time=v["ANALYSIS_TIME"],
        reentry_after=v["INTEGRATOR_REENTRY_AFTER"],
        drift_bound=v["INTEGRATOR_DRIFT_BOUND"],
    )
    _check_fit_window(window, integrator)

    manifest = RunManifest(
        echo=echo,
        model=model,
        ensemble=EnsembleConfig(
            n_traj=v["ENSEMBLE_N_TRAJ"], seed=v["ENSEMBLE_SEED"], chunk_size=v["ENSEMBLE_CHUNK_SIZE"],
        ),
        integrator=integrator,
        quantum=QuantumConfig(
            dt=v["QUANTUM_DT"],
            t_final=v["QUANTUM_T_FINAL"],
            record_stride=v["QUANTUM_RECORD_STRIDE"],
            cap_length=v["QUANTUM_CAP_LENGTH"],
            cap_strength=v["QUANTUM_CAP_STRENGTH"],
            cap_power=v["QUANTUM_CAP_POWER"],
            snapshot_times=tuple(v["QUANTUM_SNAPSHOT_TIMES"]),
        ),
        grid={
            "z_min": v["GRID_Z_MIN"], "z_max": v["GRID_Z_MAX"], "n_z": v["GRID_N_Z"],
            "x_min": v["GRID_X_MIN"], "x_max": v["GRID_X_MAX"], "n_x": v["GRID_N_X"],
        },
        energies=list(v["SWEEP_EI"]),
        temperatures_K=temperatures,
        fit_window=(window[0], window[1]),
        bin_width=v["ANALYSIS_BIN_WIDTH"],
        fine_bin_width=v["ANALYSIS_FINE_BIN_WIDTH"],
        out_dir=v["OUTPUT_DIR"],
        dump_trajectories=v["OUTPUT_DUMP_TRAJECTORIES"],
        lines=lines,
    )
    # every sweep point must give a valid model
    for ei in manifest.energies:
        for t_K in manifest.temperatures_K:
            manifest.spec(ei, t_K)
    return manifest


def load_manifest(path: Optional[str] = None) -> RunManifest:
    if path is None:
        return parse_manifest("")
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read manifest {path}: {e.strerror}") from None
    return parse_manifest(text)


@dataclass(frozen=True)
class RuntimeSettings:
    n_jobs: int = 1
    log_level: str = "INFO"
    out_dir: Optional[str] = None


def runtime_settings() -> RuntimeSettings:
    """Process settings from the environment (and a local .env file, if present)"""
    load_dotenv()
    n_jobs_text = os.getenv("SCATTERSIM_N_JOBS", "1")
    try:
        n_jobs = int(n_jobs_text)
    except ValueError:
        raise ConfigError(f"'{n_jobs_text}' is not an integer", field="SCATTERSIM_N_JOBS") from None
    if n_jobs == 0:
        raise ConfigError("worker count must be non-zero (-1 uses every core)", field="SCATTERSIM_N_JOBS")
    return RuntimeSettings(
        n_jobs=n_jobs,
        log_level=os.getenv("SCATTERSIM_LOG_LEVEL", "INFO").upper(),
        out_dir=os.getenv("SCATTERSIM_OUT_DIR") or None,
    )


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
