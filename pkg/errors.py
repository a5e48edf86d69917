"""
Exception hierarchy for the response-time pipeline.

Configuration problems, data problems and internal faults are kept apart so
the command line can map them to distinct exit codes.
"""

from typing import Optional


class PipelineError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 3

    def __reduce__(self):
        # Worker processes send errors back pickled; subclass __init__ signatures differ
        return _rebuild_error, (type(self), self.args, self.__dict__)


def _rebuild_error(cls, args, state):
    error = cls.__new__(cls)
    Exception.__init__(error, *args)
    error.__dict__.update(state)
    return error


class ConfigError(PipelineError):
    """Invalid or incomplete run configuration."""

    exit_code = 1


class DataError(PipelineError, ValueError):
    """Input data violates a documented format or precondition."""

    exit_code = 2


# --- event model -----------------------------------------------------------

class MissingFile(DataError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"Required file not found: {self.path}")


class SchemaError(DataError):
    def __init__(self, file, line: Optional[int], reason: str):
        self.file = str(file)
        self.line = line
        self.reason = reason
        where = f"{self.file}:{line}" if line is not None else self.file
        super().__init__(f"{where}: {reason}")


class NonMonotonicTimestamp(DataError):
    def __init__(self, file, line: int):
        self.file = str(file)
        self.line = line
        super().__init__(f"{self.file}:{line}: timestamp does not increase")


class BadHeader(DataError):
    pass


class NonNumericSample(DataError):
    def __init__(self, file, line: int, value: str):
        self.file = str(file)
        self.line = line
        super().__init__(f"{self.file}:{line}: non-numeric sample {value!r}")


class ZeroRate(DataError):
    pass


# --- labeling --------------------------------------------------------------

class UnknownCategoryName(DataError):
    pass


# --- feature extraction ----------------------------------------------------

class EmptyWindow(DataError):
    pass


class DegenerateWindow(DataError):
    pass


class WindowTooShort(DataError):
    pass


class TooFewIntervals(DataError):
    pass


class ZeroHfPower(DataError):
    pass


# --- models and evaluation -------------------------------------------------

class DegenerateTarget(DataError):
    pass


class TooFewRows(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewInstances(DataError):
    def __init__(self, participant: str, count: int, minimum: int):
        self.participant = participant
        self.count = count
        self.minimum = minimum
        super().__init__(
            f"Participant {participant} has {count} instances, at least {minimum} required"
        )


class EmptyIntersection(DataError):
    pass


class ModelFormatError(DataError):
    pass


class NotFitted(PipelineError):
    """A model was used for prediction before it was fitted."""


class LeakageError(PipelineError):
    """A fitted transform saw rows outside its training split."""


# --- analysis --------------------------------------------------------------

class TooFewSamples(DataError):
    pass


class ConstantInput(DataError):
    pass


# --- generator and run -----------------------------------------------------

class InvalidConfig(ConfigError):
    pass


class CalibrationFailed(DataError):
    pass


class MixedArtifacts(DataError):
    pass
