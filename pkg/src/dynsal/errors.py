"""Exception hierarchy shared by the library and the CLI.

Library code raises; only ``dynsal.cli.main`` turns an exception into a
process exit code, read from the class attribute ``exit_code``:

    1: usage (bad flags, malformed config)
    2: data error (schema, shapes, inventories, degenerate inputs)
    3: numerical failure (NaN/Inf, divergence, failed self-check)
"""
from __future__ import annotations


class SaliencyError(Exception):
    """Base class for every error raised by dynsal."""

    exit_code = 2


class UsageError(SaliencyError, ValueError):
    """Bad command-line flags or a malformed ``key = value`` file."""

    exit_code = 1

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class DataError(SaliencyError):
    """Dataset, checkpoint or schema problem."""


class DimensionError(DataError, ValueError):
    """Tensor shapes that an operation cannot combine."""


class ConfigurationError(DataError, ValueError):
    """Model geometry that cannot be built (e.g. indivisible input side)."""


class DegenerateMapError(DataError):
    """A map whose standard deviation (or mass) is too small to normalize."""


class NoFixationError(DataError):
    """A fixation map with no fixated cells."""


class InventoryError(DataError):
    """Predictions and ground truth do not cover the same frames."""


class NumericalError(SaliencyError):
    """NaN/Inf values, divergence, or a failed numerical property."""

    exit_code = 3
