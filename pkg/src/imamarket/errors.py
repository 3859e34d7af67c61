"""Exception types shared across the package."""

from __future__ import annotations


class SpecError(ValueError):
    """A construction invariant was violated.

    Parameters
    ----------
    field : str
        Name of the offending field, as it appears in configs and dataclasses.
    message : str
        Human-readable description of the violation.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConfigError(ValueError):
    """A scenario document could not be parsed or does not follow the schema."""


class ConvergenceError(RuntimeError):
    """A solver could not produce a certified answer."""
