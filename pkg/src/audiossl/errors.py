"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(ValueError):
    """A documented precondition of a call was violated."""


class BatchSizeError(ContractError):
    """Batch too small for a batch statistic (e.g. train-mode batchnorm)."""


class FormatError(ValueError):
    """A file on disk does not match the expected binary or text layout."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer received a NaN or infinite gradient."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class ConfigError(ValueError):
    """Invalid configuration text; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
