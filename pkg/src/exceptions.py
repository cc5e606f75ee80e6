"""Toolkit errors. Every class carries the exit code the CLI reports."""

from typing import Optional


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1


class ConfigError(ToolkitError):
    """Config file could not be parsed or violates a parameter invariant."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class StorageError(ToolkitError):
    """Reading or writing a file failed."""

    exit_code = 3


class DataFormatError(ToolkitError):
    """Malformed stamp data or a run that does not follow the protocol."""

    exit_code = 4

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class SegmentationError(DataFormatError):
    """Merged events could not be split into one block per setting."""


class FitError(ToolkitError):
    """Fit preconditions not met or the optimizer failed outright."""

    exit_code = 4


class ModelError(ToolkitError, ValueError):
    """Model input outside its domain (R outside (0,1), alpha < 1, too few samples...)."""


class AcceptanceError(ToolkitError):
    """One or more roundtrip criteria failed."""

    exit_code = 5
