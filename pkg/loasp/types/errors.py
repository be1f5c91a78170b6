"""Exception hierarchy for the loasp package."""

from typing import Any, Optional, Sequence, Tuple


class LoASPError(Exception):
    """Base exception for all loasp errors."""

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(message={self.message!r})"


class ContractViolation(LoASPError, ValueError):
    """Raised when an operation is called outside its documented preconditions."""

    pass


class ShapeError(LoASPError, ValueError):
    """Raised when tensor shapes are incompatible."""

    def __init__(self, message: str, shapes: Sequence[Tuple[int, ...]] = ()) -> None:
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(message={self.message!r}, shapes={self.shapes!r})"


class TooSmallInputError(ShapeError):
    """Raised when a feature map is spatially smaller than the down-scaling rank."""

    pass


class DegenerateBatchError(ShapeError):
    """Raised when batch normalization sees fewer than two values per channel."""

    pass


class NumericFailureError(LoASPError, ArithmeticError):
    """Raised when a NaN or infinity appears in a value, gradient or loss.

    Attributes:
        node: Name of the first offending operation or parameter.
        epoch: Training epoch at failure, when raised by the trainer.
        batch: Batch index at failure, when raised by the trainer.
    """

    def __init__(
        self,
        message: str,
        node: Optional[str] = None,
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.node = node
        self.epoch = epoch
        self.batch = batch

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}("
            f"message={self.message!r}, "
            f"node={self.node!r}, epoch={self.epoch!r}, batch={self.batch!r})"
        )


class ConfigurationError(LoASPError):
    """Raised for unknown keys, unknown ablation cells or invalid protocols.

    Attributes:
        valid: Accepted values, when the error concerns a closed set.
    """

    def __init__(self, message: str, valid: Optional[Sequence[Any]] = None) -> None:
        if valid:
            message = f"{message}; valid values: {', '.join(str(v) for v in valid)}"
        super().__init__(message)
        self.valid = list(valid) if valid else []


class UnsupportedInitError(LoASPError):
    """Raised when an initialization scheme does not exist for the requested setting."""

    pass


class CheckpointFormatError(LoASPError):
    """Raised when a checkpoint or dataset container is malformed."""

    pass


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the command-line exit code.

    Args:
        error: The exception that terminated a command.

    Returns:
        2 for configuration errors, 3 for numeric failures, 1 otherwise.
    """
    if isinstance(error, ConfigurationError):
        return 2
    if isinstance(error, NumericFailureError):
        return 3
    return 1
