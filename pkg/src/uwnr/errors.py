"""Exception types shared across the package."""


class UWNRError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ShapeError(UWNRError, ValueError):
    kind = "shape"


class ConfigError(UWNRError, ValueError):
    kind = "config"


class ContractError(UWNRError, RuntimeError):
    kind = "contract"


class NumericError(UWNRError, ArithmeticError):
    kind = "numeric"


class CheckpointError(UWNRError, ValueError):
    kind = "checkpoint"


class ImageIOError(UWNRError, OSError):
    kind = "io"
