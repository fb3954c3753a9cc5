"""Exception hierarchy shared by every layer.

Library code raises these; only the CLI catches them and turns ``exit_code``
into the process status.
"""
from typing import Optional

from config.constants import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_RUNTIME_FAILURE


class ReuseRiskError(Exception):
    exit_code = EXIT_RUNTIME_FAILURE


class ConfigError(ReuseRiskError):
    exit_code = EXIT_CONFIG_ERROR


class DataError(ReuseRiskError):
    exit_code = EXIT_DATA_ERROR


class RunFailure(ReuseRiskError):
    exit_code = EXIT_RUNTIME_FAILURE


# ── Numerics ──────────────────────────────────────────────────────────────────

class ShapeError(RunFailure, ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NumericError(RunFailure, ValueError):
    """A NaN or Inf reached an op boundary."""


class AutogradError(RunFailure):
    """Misuse of the tape: non-scalar loss, second backward, unrecorded loss."""


# ── Data ──────────────────────────────────────────────────────────────────────

class GraphError(DataError, ValueError):
    pass


class SchemaError(DataError):
    """A record in an input file violates its schema."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class RankingError(DataError, ValueError):
    pass


# ── Training ──────────────────────────────────────────────────────────────────

class ClientFailure(RunFailure):
    def __init__(self, admin_id: int, cause: BaseException):
        super().__init__(f"client {admin_id} failed: {cause}")
        self.admin_id = admin_id
        self.cause = cause
