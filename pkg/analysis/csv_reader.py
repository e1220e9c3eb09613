import logging
from typing import IO, Union

import numpy as np
import pandas as pd

from errors import SchemaError
from observables import TimeSeries
from units import Dimension, atomic, unit_factor

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ["t_ps", "p_trap"]


def read_trapping_series(source: Union[str, IO]) -> TimeSeries:
    """Load a trapping-probability series written by the classical or quantum runs"""
    try:
        df = pd.read_csv(source, comment="#")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise SchemaError(f"cannot parse trapping series: {e}") from None

    # Standardize column names
    df.columns = df.columns.str.lower().str.strip()
    column_mapping = {
        "time_ps": "t_ps", "t": "t_ps",
        "trapping": "p_trap", "p": "p_trap",
        "err": "stderr", "error": "stderr",
    }
    for old_col, new_col in column_mapping.items():
        if old_col in df.columns and new_col not in df.columns:
            df = df.rename(columns={old_col: new_col})

    if "t_ps" not in df.columns and "t_fs" in df.columns:
        ps_per_fs = unit_factor(Dimension.TIME, "fs") / unit_factor(Dimension.TIME, "ps")
        df["t_ps"] = pd.to_numeric(df["t_fs"], errors="coerce") * ps_per_fs

    if not all(col in df.columns for col in REQUIRED_COLUMNS):
        raise SchemaError("trapping series needs columns t_ps and P_trap", columns=df.columns)

    for col in REQUIRED_COLUMNS:
        df[col] = pd.to_numeric(df[col], errors="coerce")
    n_rows = len(df)
    df = df.dropna(subset=REQUIRED_COLUMNS)
    if len(df) < n_rows:
        logger.warning("dropped %d non-numeric rows from the trapping series", n_rows - len(df))
    if df.empty:
        raise SchemaError("trapping series has no numeric rows", columns=df.columns)

    stderr = pd.to_numeric(df["stderr"], errors="coerce").fillna(0.0) if "stderr" in df.columns \
        else pd.Series(np.zeros(len(df)))
    try:
        return TimeSeries(
            times=atomic(df["t_ps"].to_numpy(dtype=float), Dimension.TIME, "ps"),
            values=df["p_trap"].to_numpy(dtype=float),
            stderr=stderr.to_numpy(dtype=float),
        )
    except ValueError as e:
        raise SchemaError(str(e), columns=df.columns) from None
