from typing import Any, Dict, Optional


class SeparationError(RuntimeError):
    """Base error for the separation engine; carries optional structured context."""

    def __init__(self, message: str, *, detail: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.detail = detail or {}


class SignalValidationError(SeparationError):
    """Raised when samples or shapes violate a container invariant."""


class ContractError(SeparationError):
    """Raised on API misuse (wrong chunk size, layout mismatch, push after flush)."""


class DomainError(SeparationError):
    """Raised when a quantity is undefined for the given input (silent signal, empty signal)."""


class RateMismatchError(SignalValidationError):
    def __init__(self, expected: int, actual: int, *, path: Optional[str] = None) -> None:
        where = f" ({path})" if path else ""
        super().__init__(
            f"sample rate {actual} Hz does not match pipeline rate {expected} Hz{where}",
            detail={"expected": expected, "actual": actual, "path": path},
        )
        self.expected = expected
        self.actual = actual


class AudioDecodeError(SeparationError):
    """Unsupported codec or unreadable WAV payload."""


class AudioWriteError(SeparationError):
    """The WAV file could not be written."""


class WeightLoadError(SeparationError):
    """Base class for weight container failures."""


class BadMagicError(WeightLoadError):
    pass


class TruncatedWeightsError(WeightLoadError):
    pass


class ShapeMismatchError(WeightLoadError):
    pass


class FingerprintMismatchError(WeightLoadError):
    pass


class NumericalError(SeparationError):
    def __init__(self, message: str, *, iteration: Optional[int] = None, detail: Optional[Dict[str, Any]] = None) -> None:
        merged = dict(detail or {})
        merged["iteration"] = iteration
        super().__init__(message, detail=merged)
        self.iteration = iteration


class IvaConvergenceError(NumericalError):
    """Unmixing matrices stayed singular after regularization."""


class DatasetItemError(SeparationError):
    def __init__(self, message: str, *, index: int, detail: Optional[Dict[str, Any]] = None) -> None:
        merged = dict(detail or {})
        merged["index"] = index
        super().__init__(f"item {index}: {message}", detail=merged)
        self.index = index


_IO_ERRORS = (OSError, AudioDecodeError, AudioWriteError, WeightLoadError, DatasetItemError)


def is_io_error(exc: BaseException) -> bool:
    """CLI exit-code classification: True for file / container failures."""
    if isinstance(exc, DatasetItemError) and exc.__cause__ is not None:
        return is_io_error(exc.__cause__)
    return isinstance(exc, _IO_ERRORS)
