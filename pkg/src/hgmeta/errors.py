"""Exception hierarchy shared across the package."""

from __future__ import annotations


class HgmetaError(Exception):
    """Base class for all package errors."""


class ContractError(HgmetaError):
    """A caller violated an operation's precondition (bad shape, range, ...)."""


class NumericsError(HgmetaError):
    """A tensor operation produced NaN/Inf or was fed non-finite data."""


class OracleError(HgmetaError):
    """The finite-difference oracle could not evaluate the target function."""


class DataError(HgmetaError):
    """Dataset ingestion or validation failure with a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ConfigError(HgmetaError):
    """Run configuration is malformed or contains unknown keys."""


class TrainingError(HgmetaError):
    """Training aborted (non-finite loss, gradient, or parameter)."""

    def __init__(self, message: str, step: int, state=None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.state = state
