"""Exception types raised across the package."""


class SlimError(Exception):
    """Base class for all package errors."""


class SceneFormatError(SlimError, ValueError):
    """A scene, layout, mask or recipe file could not be parsed."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DuplicateObjectError(SceneFormatError):
    pass


class NonFiniteCoordinateError(SceneFormatError):
    pass


class ConfigurationError(SlimError, ValueError):
    """Inconsistent scene/layout/strategy combination or bad shapes."""


class ContractViolation(SlimError, ValueError):
    """An operation was called outside its precondition."""


class VerificationFailure(SlimError, AssertionError):
    """A verification suite (e.g. gradient check) did not pass."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class TrainingFailure(SlimError, RuntimeError):
    pass


class GenerationError(SlimError, RuntimeError):
    pass
