"""Exception types shared across the package."""


class SnapflowError(Exception):
    """Base class for package-specific failures."""


class DegeneratePlanError(SnapflowError):
    """A transport plan has a zero row where a conditional row was required."""


class SingularVarianceError(SnapflowError):
    """A bridge variance of exactly zero was used where a positive one is required."""


class TrainingDivergedError(SnapflowError):
    """A loss or parameter became non-finite during training."""

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"training diverged at step {self.step}")


class IntegrationDivergedError(SnapflowError):
    """A trajectory state became non-finite during integration."""

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"integration diverged at step {self.step}")


class CheckpointFormatError(SnapflowError):
    """A checkpoint file is structurally invalid."""


class CheckpointVersionError(CheckpointFormatError):
    """A checkpoint file declares an unsupported format version."""

    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"checkpoint version {found!r}, expected {expected!r}")


class MarginalParseError(SnapflowError):
    """A marginal CSV file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
