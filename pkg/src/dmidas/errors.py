"""Exception types shared across the package."""


class DmidasError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DmidasError):
    """Invalid configuration: bad shapes declared, unknown keys, out-of-range values."""


class ShapeError(DmidasError):
    """Runtime dimension mismatch between arrays."""


class DataError(DmidasError):
    """Problem with input data: unparseable files, short series, duplicates."""


class TrainingError(DmidasError):
    """Optimization failure: non-finite losses or gradients."""


class NumericsError(DmidasError):
    """A numeric value left the finite float64 domain (NaN or Inf)."""
