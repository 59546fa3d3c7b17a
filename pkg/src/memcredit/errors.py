"""Exception hierarchy shared by every module in the package."""


class MemCreditError(Exception):
    """Base class for all errors raised by memcredit."""


class DimensionError(MemCreditError, ValueError):
    """Array shapes are inconsistent with the operation."""


class ParameterError(MemCreditError, ValueError):
    """An argument is outside its valid range."""


class DivergenceError(MemCreditError, ArithmeticError):
    """A loss, gradient or parameter became non-finite."""


class EmptyMemoryError(MemCreditError):
    """A read was attempted on an episodic memory with no slots."""


class MechanismContractError(MemCreditError):
    """A credit-assignment routine was called without the data it requires."""


class ConfigError(MemCreditError, ValueError):
    """Invalid experiment configuration."""


class IdxParseError(MemCreditError, ValueError):
    """Malformed IDX file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, path=None, offset: int = 0):
        self.path = path
        self.offset = offset
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")


class MagicMismatchError(IdxParseError):
    pass


class TruncatedFileError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass
