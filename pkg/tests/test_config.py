from pathlib import Path

import pytest

from config import RuntimeSettings, job_seed, load_manifest, parse_manifest, runtime_settings
from errors import ConfigError
from qdynamics import build_grid, initial_packet
from units import Dimension, atomic, user

ROOT = Path(__file__).resolve().parents[1]


def test_defaults():
    manifest = parse_manifest("")
    assert manifest.energies_meV() == [2.0, 5.0]
    assert manifest.temperatures_K == [0.0, 10.0, 20.0, 40.0, 80.0]
    assert manifest.seed == 20150706
    assert manifest.ensemble.n_traj == 100000
    assert user(manifest.fit_window[0], Dimension.TIME, "ps") == pytest.approx(40.0)
    assert manifest.bin_width == 0.1
    assert manifest.fine_bin_width == 0.004
    assert "OUTPUT_DIR" not in manifest.echo
    assert manifest.echo["MODEL_V0"] == "34.85 meV"


def test_values_accept_alternative_units():
    manifest = parse_manifest("MODEL_ZI=160 bohr\nSWEEP_EI=2 meV, 0.005 eV\nSWEEP_T=10 K, 20\n")
    assert manifest.model["zi"] == pytest.approx(160.0)
    assert manifest.energies_meV() == [2.0, 5.0]
    assert manifest.temperatures_K == [10.0, 20.0]


def test_unknown_key_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_manifest("# header\nMODEL_V0=34.85 meV\nBOGUS=1\n")
    assert info.value.field == "BOGUS"
    assert info.value.line == 3


def test_wrong_unit_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_manifest("MODEL_V0=34.85 parsec\n")
    assert info.value.field == "MODEL_V0"
    assert info.value.line == 1
    assert "line 1" in str(info.value)


def test_model_invariant_is_traced_to_its_line():
    with pytest.raises(ConfigError) as info:
        parse_manifest("SWEEP_EI=2 meV\nMODEL_Z0=5 angstrom\n")
    assert info.value.field == "MODEL_Z0"
    assert info.value.line == 2


def test_fit_window_beyond_the_run_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_manifest("INTEGRATOR_T_FINAL=30 ps\nANALYSIS_TIME=30 ps\nANALYSIS_FIT_WINDOW=40, 60 ps\n")
    assert info.value.field == "ANALYSIS_FIT_WINDOW"
    assert info.value.line == 3
    assert "outside the run" in str(info.value)


def test_sparse_fit_window_is_rejected():
    # records every 5 ps leave five samples in 40-60 ps
    with pytest.raises(ConfigError) as info:
        parse_manifest("ANALYSIS_FIT_WINDOW=40, 60 ps\nINTEGRATOR_RECORD_STRIDE=5000\n")
    assert info.value.field == "ANALYSIS_FIT_WINDOW"
    assert info.value.line == 1
    assert "5 recorded samples" in str(info.value)
    assert parse_manifest("INTEGRATOR_RECORD_STRIDE=1000\n").integrator.record_stride == 1000


@pytest.mark.parametrize("text", [
    "ENSEMBLE_N_TRAJ=many",
    "ANALYSIS_FIT_WINDOW=40 ps",
    "ANALYSIS_BIN_WIDTH=0",
    "ANALYSIS_FINE_BIN_WIDTH=-0.01",
    "ANALYSIS_FIT_WINDOW=60, 40 ps",
    "MODEL_DZ=5 bohr extra",
    "INTEGRATOR_DT=1 angstrom",
])
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_manifest(text)


def test_seed_override_is_echoed():
    manifest = parse_manifest("").with_seed(7)
    assert manifest.seed == 7
    assert manifest.echo["ENSEMBLE_SEED"] == "7"


def test_job_seed_is_stable_and_distinct():
    a = job_seed(20150706, 2.0, 0.0)
    assert a == job_seed(20150706, 2.0, 0.0)
    assert a != job_seed(20150706, 2.0, 10.0)
    assert a != job_seed(20150706, 5.0, 0.0)
    assert 0 <= a < 2 ** 63


def test_resolved_view_is_in_atomic_units():
    resolved = parse_manifest("").resolved()
    assert resolved["model"]["V0"] == pytest.approx(atomic(34.85, Dimension.ENERGY, "meV"))
    assert len(resolved["bath_omegas"]) == 8
    assert resolved["temperatures_kT"][0] == 0.0


def test_shipped_manifests_parse():
    defaults = load_manifest(str(ROOT / "manifests" / "defaults.env"))
    assert defaults.ensemble.n_traj == 100000
    smoke = load_manifest(str(ROOT / "manifests" / "smoke.env"))
    assert smoke.ensemble.n_traj == 200
    assert smoke.out_dir == "results_smoke"


def test_smoke_grid_supports_the_packet():
    smoke = load_manifest(str(ROOT / "manifests" / "smoke.env"))
    spec = smoke.spec(smoke.energies[0])
    ws = initial_packet(spec, build_grid(spec, **smoke.grid))
    assert ws.norm == pytest.approx(1.0)


def test_missing_manifest_file(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(str(tmp_path / "absent.env"))


def test_runtime_settings(monkeypatch):
    monkeypatch.setenv("SCATTERSIM_N_JOBS", "3")
    monkeypatch.setenv("SCATTERSIM_LOG_LEVEL", "debug")
    monkeypatch.delenv("SCATTERSIM_OUT_DIR", raising=False)
    assert runtime_settings() == RuntimeSettings(n_jobs=3, log_level="DEBUG", out_dir=None)
    monkeypatch.setenv("SCATTERSIM_N_JOBS", "0")
    with pytest.raises(ConfigError):
        runtime_settings()
    monkeypatch.setenv("SCATTERSIM_N_JOBS", "lots")
    with pytest.raises(ConfigError):
        runtime_settings()
