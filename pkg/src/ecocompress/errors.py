"""Exception types shared across the package."""


class EcoError(Exception):
    """Base class for all package errors."""


class DimensionError(EcoError, ValueError):
    pass


class DomainError(EcoError, ArithmeticError):
    """Numeric input outside an operation's domain (log of <= 0, sqrt of < 0, ...)."""


class ContractError(EcoError, ValueError):
    pass


class IntegrityError(EcoError):
    """Quantized data inconsistent with its codebook or counts."""


class CorruptStreamError(EcoError):
    """Bitstream or container failed validation while decoding."""


class IngestionError(EcoError):
    pass


class TrainingDiverged(EcoError):
    pass
