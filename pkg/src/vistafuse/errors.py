"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform (matmul mismatch, bad window shape, ...)."""


class ParameterError(ValueError):
    """A configuration value or function argument is out of its valid range."""


class DataError(ValueError):
    """Input data violates a schema or size precondition."""


class ContractError(RuntimeError):
    """An API contract was violated (double backward, missing gradient, ...)."""


class GeometryError(ValueError):
    """Degenerate geometry (collinear corners, zero-area quad)."""


class ParseError(ValueError):
    """A file could not be parsed; message carries the offending location."""
