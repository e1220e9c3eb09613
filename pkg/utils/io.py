"""Result writers. Every text output starts with '#' metadata lines naming the code
version, the seed and the manifest it came from.
"""
import json
import os
import struct
from typing import Any, Dict, Mapping, Tuple

import numpy as np
import pandas as pd

from config import VERSION

TRAJECTORY_HEADER = "<QQQ"
TRAJECTORY_ROW = np.dtype([
    ("t", "<f8"), ("E", "<f8"), ("z", "<f8"), ("x", "<f8"),
    ("pz", "<f8"), ("px", "<f8"), ("escaped", "u1"),
])
SNAPSHOT_HEADER = "<QQdddd"


def metadata_lines(seed: int, manifest: Mapping[str, str]) -> str:
    echo = json.dumps(dict(manifest), sort_keys=True, separators=(",", ":"))
    return f"# scattersim {VERSION}\n# seed {seed}\n# manifest {echo}\n"


def write_csv(path: str, frame: pd.DataFrame, seed: int, manifest: Mapping[str, str]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(metadata_lines(seed, manifest))
        frame.to_csv(f, index=False, float_format="%.17g", lineterminator="\n")
    return path


def write_json(path: str, payload: Dict[str, Any]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2, allow_nan=True))
        f.write("\n")
    return path


def write_trajectory(path: str, record, n_bath: int) -> str:
    """Little-endian dump: header (n_steps, stride, N) as u64, then one row per recorded time.

    Rows hold t, E, z, x, p_z, p_x as f8 in atomic units and an escaped flag as u1.
    """
    rows = np.zeros(len(record.times), dtype=TRAJECTORY_ROW)
    rows["t"] = record.times
    rows["E"] = record.energies
    rows["z"] = record.z
    rows["x"] = record.x
    rows["pz"] = record.pz
    rows["px"] = record.px
    rows["escaped"] = record.escaped.astype(np.uint8)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack(TRAJECTORY_HEADER, record.n_steps, record.record_stride, n_bath))
        f.write(rows.tobytes())
    return path


def read_trajectory(path: str) -> Tuple[Tuple[int, int, int], np.ndarray]:
    with open(path, "rb") as f:
        header = struct.unpack(TRAJECTORY_HEADER, f.read(struct.calcsize(TRAJECTORY_HEADER)))
        rows = np.frombuffer(f.read(), dtype=TRAJECTORY_ROW)
    return header, rows


def write_snapshot(path: str, density: np.ndarray, grid) -> str:
    """Header (n_z, n_x) as u64 and (z_min, z_max, x_min, x_max) as f8, then row-major f8 density"""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack(SNAPSHOT_HEADER, grid.n_z, grid.n_x,
                            grid.z_min, grid.z_max, grid.x_min, grid.x_max))
        f.write(np.ascontiguousarray(density, dtype="<f8").tobytes(order="C"))
    return path


def read_snapshot(path: str) -> Tuple[Tuple, np.ndarray]:
    with open(path, "rb") as f:
        header = struct.unpack(SNAPSHOT_HEADER, f.read(struct.calcsize(SNAPSHOT_HEADER)))
        density = np.frombuffer(f.read(), dtype="<f8").reshape(header[0], header[1])
    return header, density
