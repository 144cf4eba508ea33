"""Exception hierarchy shared by every module."""


class TuniError(Exception):
    pass


class DimensionError(TuniError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TuniError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(TuniError, ValueError):
    """A model or training configuration is invalid."""


class NonFiniteError(TuniError, FloatingPointError):
    """An op produced NaN or Inf."""


class CheckpointError(TuniError):
    pass


class BadMagicError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class MissingParameterError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class PNMError(TuniError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
