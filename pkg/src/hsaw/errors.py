"""Exception types shared across the package."""


class HsawError(Exception):
    """Base class for every error raised by hsaw."""


class ShapeError(HsawError, ValueError):
    """Tensor or array dimensions do not satisfy an operation's contract."""


class DomainError(HsawError, ValueError):
    """An input value is outside the domain an operation accepts."""


class TrainingError(HsawError, RuntimeError):
    """Training could not proceed (too little data, divergence)."""


class StoreError(HsawError):
    """Base class for persistence failures."""


class BadMagicError(StoreError):
    pass


class VersionMismatchError(StoreError):
    pass


class PayloadLengthError(StoreError):
    pass


class ConsistencyError(StoreError):
    pass


class MissingBlobError(StoreError):
    pass
