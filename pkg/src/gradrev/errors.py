"""Exception hierarchy shared by every module."""


class GradrevError(Exception):
    pass


class DimensionError(GradrevError, ValueError):
    """Array shapes do not line up."""


class ValidationError(GradrevError, ValueError):
    """An argument violates a documented precondition."""


class TrainingError(GradrevError, RuntimeError):
    """Non-finite losses or gradients during optimisation."""


class FitError(GradrevError, RuntimeError):
    """The camera least-squares problem is degenerate or too poor to use."""


class IngestionError(GradrevError, OSError):
    """A file on disk could not be read or parsed."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class ConfigurationError(GradrevError, ValueError):
    """An experiment or CLI configuration is incomplete or unknown."""
