"""Exception hierarchy shared across the package."""


class DriftplanError(Exception):
    """Base class for all package errors."""


class ParameterError(DriftplanError, ValueError):
    """An argument violates a documented precondition."""


class ExtentError(DriftplanError):
    """A query point lies outside the declared spatial or temporal extent."""

    def __init__(self, axis: str, value: float, lo: float, hi: float):
        self.axis = axis
        self.value = value
        self.lo = lo
        self.hi = hi
        super().__init__(
            f"query {axis}={value!r} outside extent [{lo!r}, {hi!r}]"
        )


class HorizonError(DriftplanError):
    """A requested time span is not covered by the available data."""


class FormatError(DriftplanError):
    """A binary or text artifact does not conform to its file format."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class ConfigError(DriftplanError):
    """An experiment configuration is inconsistent or incomplete."""


class AlreadyStrandedError(DriftplanError):
    """A policy was queried at a state inside the unreachable/obstacle set."""


class DegenerateInputError(DriftplanError):
    """A statistic is undefined for the given inputs."""


class InfeasibleConstraintsError(DriftplanError):
    """Mission sampling rejected nearly every candidate."""
