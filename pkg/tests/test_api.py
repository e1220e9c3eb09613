import io

import numpy as np
import pandas as pd
import pytest
from fastapi.testclient import TestClient

from config import VERSION
from main import app

client = TestClient(app)


def _trapping_csv(rate_per_fs=1.3e-5):
    t_ps = np.arange(0.0, 60.0 + 1e-9, 0.01)
    frame = pd.DataFrame({"t_ps": t_ps, "P_trap": 0.3 * np.exp(-rate_per_fs * t_ps * 1000.0)})
    buf = io.StringIO()
    frame.to_csv(buf, index=False)
    return buf.getvalue().encode("utf-8")


def test_root_reports_version():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["version"] == VERSION


def test_health():
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_fit_rate_upload():
    response = client.post("/fit-rate/", files={"file": ("trapping.csv", _trapping_csv(), "text/csv")},
                           data={"window_lo_ps": "40", "window_hi_ps": "60"})
    assert response.status_code == 200
    body = response.json()
    assert body["m_per_fs"] == pytest.approx(1.3e-5, rel=1e-8)
    assert body["window_ps"] == pytest.approx([40.0, 60.0])


def test_fit_rate_reports_schema_problems():
    response = client.post("/fit-rate/", files={"file": ("bad.csv", b"time,value\n0,1\n", "text/csv")})
    assert response.status_code == 400
    assert "found columns" in response.json()["detail"]


def test_fit_rate_rejects_other_extensions():
    response = client.post("/fit-rate/", files={"file": ("trapping.xlsx", b"x", "application/octet-stream")})
    assert response.status_code == 400
    assert "Unsupported file type" in response.json()["detail"]


def test_bath_spectrum_defaults():
    response = client.post("/bath-spectrum/")
    assert response.status_code == 200
    rows = response.json()["rows"]
    assert len(rows) == 8
    assert rows[0]["omega_over_omega_c"] == pytest.approx(0.117783, abs=1e-6)


def test_bath_spectrum_from_manifest():
    response = client.post("/bath-spectrum/", files={"file": ("bath.env", b"BATH_N=4\n", "text/plain")})
    assert response.status_code == 200
    assert len(response.json()["rows"]) == 4


def test_resolve_rejects_unknown_keys():
    response = client.post("/resolve/", files={"file": ("run.env", b"BOGUS=1\n", "text/plain")})
    assert response.status_code == 400
    assert "BOGUS" in response.json()["detail"]


def test_resolve_returns_atomic_units():
    response = client.post("/resolve/", files={"file": ("run.env", b"SWEEP_EI=2 meV\n", "text/plain")})
    assert response.status_code == 200
    body = response.json()
    assert body["resolved"]["omega0"] > 0
    assert body["manifest"]["SWEEP_EI"] == "2 meV"
