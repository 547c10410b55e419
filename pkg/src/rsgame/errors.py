"""Exception hierarchy shared by the solver, simulator and CLI."""


class RSGameError(Exception):
    """Base class for all package errors."""


class ModelStructureError(RSGameError):
    """A model field has the wrong shape or is missing."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ModelParameterError(RSGameError):
    """A model parameter lies outside its admissible range."""


class DomainError(RSGameError, ValueError):
    """A time or state argument lies outside the model's domain."""


class NumericalError(RSGameError):
    """A linear-algebra routine failed or produced non-finite output."""


class RiccatiBlowUpError(NumericalError):
    """The backward Riccati integration escaped to infinity."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"Riccati solution blew up at t={self.time:.6g}")


class ConfigError(RSGameError):
    """A configuration file could not be parsed or validated."""


class SimulationError(RSGameError):
    """Too many Monte Carlo paths were flagged, or none survived."""
