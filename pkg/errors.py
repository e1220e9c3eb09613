from typing import Optional


class ScatterSimError(Exception):
    """Base class for every failure the simulator reports to its callers"""


class ConfigError(ScatterSimError):
    """Invalid manifest entry, parameter value or unit dimension"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.reason = message
        self.field = field
        self.line = line
        location = ""
        if field:
            location = f"{field}: "
        if line is not None:
            location = f"line {line}, {location}"
        super().__init__(f"{location}{message}")


class FitRangeError(ConfigError):
    """Rate-fit window outside the recorded times or holding too few samples"""


class StructuralError(ScatterSimError):
    """Array shapes that disagree with the bath size"""


class FitDomainError(ScatterSimError):
    """Non-positive values inside a logarithmic fit window"""


class EmptyResultError(ScatterSimError):
    """A distribution was requested over an empty set of escaped trajectories"""


class AbortThresholdError(ScatterSimError):
    """Too many trajectories went non-finite during propagation"""

    def __init__(self, n_aborted: int, n_total: int, threshold: float):
        self.n_aborted = n_aborted
        self.n_total = n_total
        self.threshold = threshold
        super().__init__(
            f"{n_aborted} of {n_total} trajectories aborted "
            f"(limit {threshold:.3%} of the ensemble)"
        )


class GridError(ScatterSimError):
    """Wavepacket grid that cannot represent the requested packet"""


class NormDriftError(ScatterSimError):
    """Unitary propagation lost or gained norm beyond tolerance"""


class SchemaError(ScatterSimError):
    """Ingested CSV does not match the expected series layout"""

    def __init__(self, message: str, columns=None):
        self.columns = list(columns) if columns is not None else []
        if self.columns:
            message = f"{message} (found columns: {', '.join(self.columns)})"
        super().__init__(message)
