"""Exception types shared across the package."""


class ZoomCascadeError(Exception):
    """Base class for all package errors."""


class ConfigError(ZoomCascadeError, ValueError):
    """Invalid geometry, hyperparameters or detector settings."""


class UndefinedMetricError(ZoomCascadeError, ValueError):
    """A metric was requested on data for which it is not defined."""


class ReplayLookupError(ZoomCascadeError, KeyError):
    """A replay archive has no entry for the requested scene/tile/tier."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TrainingError(ZoomCascadeError, FloatingPointError):
    """Training hit a non-finite gradient; carries the offending log record and the last good model."""

    def __init__(self, message, record=None, model=None):
        super().__init__(message)
        self.record = record
        self.model = model


class StaleCacheError(ZoomCascadeError, RuntimeError):
    """A forward cache was used with a model it was not produced by."""
