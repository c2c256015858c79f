"""Exception hierarchy shared by the library and the CLI exit-code map."""


class VQSLPError(Exception):
    exit_code = 1


class DataError(VQSLPError):
    """Bad input data: unparseable files, shape mismatches, invalid values."""

    exit_code = 3


class PoseFormatError(DataError):
    pass


class HeaderError(PoseFormatError):
    pass


class FrameCountError(PoseFormatError):
    pass


class JointCountError(PoseFormatError):
    pass


class NonFiniteError(PoseFormatError):
    pass


class DegenerateDimensionError(DataError):
    def __init__(self, dim: int, value: float):
        super().__init__(f"dimension {dim} is degenerate (min == max == {value!r})")
        self.dim = dim


class SequenceTooShortError(DataError):
    pass


class NormalizationMismatchError(DataError):
    pass


class TokenRangeError(DataError):
    def __init__(self, position: int, token: int, n_tokens: int):
        super().__init__(f"token {token} at position {position} is outside [0, {n_tokens})")
        self.position = position
        self.token = token


class EmptySequenceError(DataError):
    pass


class EmptyTranslationError(DataError):
    pass


class ArtifactMismatchError(VQSLPError):
    """Artifacts that cannot be combined: unknown version, vocabulary size mismatch."""

    exit_code = 4


class NumericalError(VQSLPError):
    """Training diverged; ``snapshot`` carries the state at the failure."""

    exit_code = 5

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class StitchConfigError(VQSLPError, ValueError):
    exit_code = 2
