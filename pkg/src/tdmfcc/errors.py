"""Exception types shared across the toolkit."""


class TdmfccError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TdmfccError):
    """Invalid or inconsistent configuration."""


class FormatError(TdmfccError):
    """Malformed file container (bad header, truncated payload, wrong magic)."""


class UnsupportedFormatError(FormatError):
    """Well-formed container but an encoding we do not decode."""


class EmptyAudioError(TdmfccError):
    """Audio file contains zero samples."""


class EmptyDatasetError(TdmfccError):
    """Dataset directory has no usable entries."""


class DegenerateFilterError(TdmfccError):
    """A mel filter collapsed to fewer than two FFT bins."""

    def __init__(self, filter_index: int, message: str):
        super().__init__(message)
        self.filter_index = filter_index


class ConvergenceError(TdmfccError):
    """Iterative routine did not reach tolerance; carries the last estimate."""

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


class InitializationError(TdmfccError):
    """Random construction failed repeatedly (pathological configuration)."""


class IllConditionedError(TdmfccError):
    """Linear system is singular or near-singular."""


class ConstantTargetError(TdmfccError):
    """Target has zero variance, so normalized error is undefined."""


class StratificationError(TdmfccError):
    """Dataset cannot be split into the requested stratified folds."""
