"""Exception types and the process exit codes they map to."""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class PoisimError(Exception):
    """Base class for every error raised by this package."""

    exit_code = EXIT_INTERNAL


class UsageError(PoisimError):
    """Caller misuse: bad arguments, mismatched lengths, invalid requests."""

    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    """Invalid or inconsistent scenario configuration."""


class DataError(PoisimError):
    """Malformed or unusable input data file."""

    exit_code = EXIT_DATA


class GeoParseError(DataError):
    """Malformed geometry in a geospatial input; names the feature index."""

    def __init__(self, message: str, feature_index: int | None = None):
        if feature_index is not None:
            message = f"feature {feature_index}: {message}"
        super().__init__(message)
        self.feature_index = feature_index


class StateTransitionError(PoisimError):
    """An illegal disease-state transition was requested."""


class CalibrationError(PoisimError):
    """Calibration could not complete."""


class PortingError(DataError):
    """A city-porting step failed; carries the name of the step."""

    def __init__(self, step: str, message: str):
        super().__init__(f"porting step '{step}' failed: {message}")
        self.step = step
