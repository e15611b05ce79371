"""Exception types raised across the generator pipeline."""


class LagenError(Exception):
    """Base class for all generator errors."""


class LaSyntaxError(LagenError):
    """Input text violates the equation grammar."""

    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class DeclarationError(LagenError):
    """Undeclared, duplicated, or malformed operand declaration."""


class ShapeError(LagenError):
    """Operand shapes do not conform."""


class StructureError(LagenError):
    """Declared or derived matrix structures are inconsistent."""


class PartitionError(LagenError):
    """Requested partition grid is incompatible with the operand."""


class NoPmeError(LagenError):
    """No partitioning resolves every quadrant against the pattern database."""


class NoInvariantError(LagenError):
    """Task set admits no proper, non-empty, dependency-closed subset."""


class NonSynthesizableError(LagenError):
    """Loop invariant cannot be turned into a worksheet (update reads
    a block that is not available in the state before the iteration)."""


class LoweringError(LagenError):
    """Loop materialization failed (typically a divisibility violation)."""


class NotDivisibleError(LoweringError):
    """Extents are not divisible by the requested vector length."""


class VerificationError(LagenError):
    """Numeric verification failed (residual above tolerance, NaN, ...)."""


class ToolchainError(LagenError):
    """External C compiler or benchmark binary failed."""
