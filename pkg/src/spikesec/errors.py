"""Exception taxonomy shared across the package."""


class SpikesecError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SpikesecError):
    """A configuration value is invalid; the message names the field."""


class StructuralError(SpikesecError):
    """Inputs are structurally inconsistent (dimension/index mismatch)."""


class UsageError(SpikesecError):
    """An operation was called with unusable inputs (empty sets etc.)."""


class TrainingFailure(SpikesecError):
    """Readout training did not produce a group for every class."""


class FitError(SpikesecError):
    """A statistical model could not be fitted (degenerate data)."""


class UndefinedStatisticError(SpikesecError):
    """A test statistic is undefined for the given samples."""


class CalibrationError(SpikesecError):
    """Shipped defaults failed a calibration gate; run `calibrate`."""
