"""Exception hierarchy shared across the package."""


class EgoStereoError(Exception):
    """Base class for all package errors."""


class ShapeError(EgoStereoError, ValueError):
    pass


class DegenerateInputError(EgoStereoError, ValueError):
    pass


class OutOfViewError(EgoStereoError, ValueError):
    pass


class InvalidTransformError(EgoStereoError, ValueError):
    pass


class AlignmentDegenerateError(EgoStereoError):
    """Raised when the cross-covariance is rank deficient.

    ``partial`` holds whatever (transform, aligned) pair could still be
    computed, so callers may decide to use it anyway.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigurationError(EgoStereoError):
    exit_code = 2


class NotADatasetError(EgoStereoError):
    exit_code = 3


class IntegrityError(EgoStereoError):
    exit_code = 3

    def __init__(self, message, paths=()):
        self.paths = list(paths)
        if self.paths:
            message = message + ": " + ", ".join(str(p) for p in self.paths)
        super().__init__(message)


class DecodeError(EgoStereoError):
    exit_code = 3


class MaskUnavailableError(EgoStereoError):
    pass


class InternalConsistencyError(EgoStereoError):
    pass


class UndefinedMetricError(EgoStereoError, ValueError):
    pass


class DivergenceError(EgoStereoError):
    exit_code = 4

    def __init__(self, message, last_finite_step=None):
        super().__init__(message)
        self.last_finite_step = last_finite_step
