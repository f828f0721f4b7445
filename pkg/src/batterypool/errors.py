"""Exception hierarchy shared across the toolkit."""


class BatteryPoolError(Exception):
    """Base class for all toolkit errors."""


class UnitError(BatteryPoolError, ValueError):
    """Series units are incompatible for the requested operation."""


class AlignmentError(BatteryPoolError, ValueError):
    """Series do not share the same start timestamp and length."""


class ConfigurationError(BatteryPoolError, ValueError):
    """Invalid tariff, menu, envelope or experiment configuration."""


class DataError(BatteryPoolError, ValueError):
    """Malformed or inconsistent input data."""


class InfeasibleError(BatteryPoolError, RuntimeError):
    """A dispatch cannot satisfy its constraints (e.g. undersized battery
    asked to track an aggregate command without external resources)."""
