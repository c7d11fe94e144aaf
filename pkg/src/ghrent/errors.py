"""Exception hierarchy.

Every error raised by the package derives from :class:`GhrentError`. The four
intermediate classes map one-to-one onto CLI exit codes.
"""

from __future__ import annotations


class GhrentError(Exception):
    exit_code = 1


class ConfigError(GhrentError):
    exit_code = 2


class DataError(GhrentError, ValueError):
    exit_code = 3


class ModelError(GhrentError):
    exit_code = 4


class IoFailure(GhrentError, OSError):
    exit_code = 5


# ingest
class MissingColumn(DataError):
    pass


class EmptyInput(DataError):
    pass


class RaggedRow(DataError):
    pass


class AllRowsDropped(DataError):
    pass


class EmptyTable(DataError):
    pass


# geocode
class OutOfRange(DataError):
    pass


class UnknownLocation(DataError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class RemoteFailure(DataError):
    pass


# features
class EmptyTrain(DataError):
    pass


class DegenerateTarget(UserWarning):
    """Warning: all training prices are equal, so the outlier fences collapse."""


class MissingGeo(DataError):
    pass


class NonPositivePrice(DataError):
    pass


class ScaleMismatch(DataError):
    pass


class NonPositiveValue(DataError):
    pass


class TooFewRows(DataError):
    pass


# shared numeric
class ShapeMismatch(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class ZeroVariance(DataError):
    """Target has no variance; ``report`` (if set) carries the other metrics with r2 = nan."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EmptySeries(DataError):
    pass


class BadK(DataError):
    pass


class EmptySpace(ConfigError):
    pass


class InvalidPermutation(DataError):
    pass


class BadCategoricalSpec(ModelError):
    pass


class NoConvergence(ModelError):
    """SVR solver hit its iteration cap; ``model`` holds the best iterate."""

    def __init__(self, message: str, model=None, violation: float = float("nan")):
        super().__init__(message)
        self.model = model
        self.violation = violation


class NoSplits(ModelError):
    pass


# persist
class UnknownVersion(ModelError):
    pass


class CorruptPayload(ModelError):
    pass


class ConfigInvalid(ConfigError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))
