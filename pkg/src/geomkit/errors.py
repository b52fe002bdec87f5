"""Exception hierarchy shared by all geomkit modules.

Two branches matter for the CLI exit-code contract: ValidationError (bad
inputs or configuration, exit code 1) and NumericalError (a computation
failed or degenerated, exit code 2).
"""


class GeomkitError(Exception):
    """Base class for every error raised by geomkit."""


class ValidationError(GeomkitError):
    """Invalid arguments, shapes, or configuration."""


class NumericalError(GeomkitError):
    """A numerical computation failed or produced degenerate results."""


class InvalidBatchError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class InvalidComponentCountError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DegenerateRowError(NumericalError):
    def __init__(self, row: int, which: str):
        self.row = row
        self.which = which
        super().__init__(f"row {row} of {which} has zero variance")


class NonFiniteError(NumericalError):
    pass


class DuplicateRotationError(ValidationError):
    pass


class RankDeficiencyError(NumericalError):
    def __init__(self, requested: int, achieved: int):
        self.requested = requested
        self.achieved = achieved
        super().__init__(
            f"requested tangent rank {requested} but difference vectors "
            f"only achieve rank {achieved}"
        )


class DegeneratePushforwardError(NumericalError):
    pass


class ObjectGenerationError(NumericalError):
    pass


class AmbiguousGeodesicError(NumericalError):
    pass


class DegenerateCurveError(NumericalError):
    pass


class ElasticaStalledError(NumericalError):
    pass


class UntrainedMapperError(ValidationError):
    pass


class TrainingDivergedError(NumericalError):
    """Raised when training hits a non-finite loss.

    Carries the last checkpoint whose losses were all finite so callers can
    persist it before aborting.
    """

    def __init__(self, message, last_good=None):
        self.last_good = last_good
        super().__init__(message)
