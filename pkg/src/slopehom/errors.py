"""Exception hierarchy.

Every error carries a stable ``code`` string that the CLI reports and maps
to a process exit status.
"""

from __future__ import annotations


class SlopehomError(Exception):
    """Base class for all library errors."""

    code = "SlopehomError"
    exit_status = 1

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context

    def to_dict(self) -> dict:
        return {
            "error": self.code,
            "message": str(self),
            "context": {k: _jsonable(v) for k, v in self.context.items()},
        }


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


# panel ingestion


class PanelError(SlopehomError):
    code = "PanelError"
    exit_status = 3


class ParseError(PanelError):
    code = "ParseError"


class MissingCell(PanelError):
    code = "MissingCell"


class DuplicateKey(PanelError):
    code = "DuplicateKey"


class NonPositiveValue(PanelError):
    code = "NonPositiveValue"


class InvalidPanel(PanelError):
    code = "InvalidPanel"


# numerical


class NumericalError(SlopehomError):
    code = "NumericalError"
    exit_status = 4


class WindowTooSmall(NumericalError):
    code = "WindowTooSmall"


class SingularGram(NumericalError):
    code = "SingularGram"


class DegenerateDenominator(NumericalError):
    code = "DegenerateDenominator"


class ZeroResidual(NumericalError):
    code = "ZeroResidual"


class GridMismatch(NumericalError):
    code = "GridMismatch"


class DegeneratePath(NumericalError):
    code = "DegeneratePath"


# configuration / quantile tables


class ConfigError(SlopehomError):
    code = "ConfigError"
    exit_status = 2


class InvalidMeasure(ConfigError):
    code = "InvalidMeasure"


class QuantileTableError(SlopehomError):
    code = "QuantileTableError"
    exit_status = 5


class QuantileTableMissing(QuantileTableError):
    code = "QuantileTableMissing"


class VersionMismatch(QuantileTableError):
    code = "VersionMismatch"


class ChecksumMismatch(QuantileTableError):
    code = "ChecksumMismatch"


class MeasureMismatch(QuantileTableError):
    code = "MeasureMismatch"
