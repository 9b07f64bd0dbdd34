"""Shared exception types."""


class PlumesearchError(Exception):
    """Base class for errors raised by this package."""


class MapParseError(PlumesearchError):
    """Occupancy map file is malformed (message names the offending line)."""


class ConfigError(PlumesearchError):
    """Scenario configuration is invalid.

    Carries the full list of violations so callers can report every
    problem at once instead of failing on the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration: " + "; ".join(self.violations))


class IllConditionedError(PlumesearchError):
    """A linear solve was singular or failed to converge."""
