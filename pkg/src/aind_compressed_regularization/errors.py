"""Exception and warning types shared by the library and the command line."""

from __future__ import annotations


class CompressedRegularizationError(Exception):
    """Base class for every error raised by this package."""


class FormatError(CompressedRegularizationError, ValueError):
    """
    Malformed or truncated binary file.

    Attributes
    ----------
    offset : int
        Byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DimensionMismatchError(CompressedRegularizationError, ValueError):
    """Operand sizes do not conform."""

    def __init__(self, what: str, expected: int, actual: int) -> None:
        super().__init__(f"{what}: expected length {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class NumericalError(CompressedRegularizationError, ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""


class NonFiniteError(NumericalError):
    """NaN or Inf appeared in an input or an iterate."""


class RankDeficiencyError(NumericalError):
    """Sample matrix lost rank during orthogonalization."""


class IndefiniteOperatorError(NumericalError):
    """CG met non-positive curvature."""

    def __init__(self, iteration: int, curvature: float) -> None:
        super().__init__(
            f"normal operator is not positive definite: p^T K p = {curvature:.3e} at CG iteration {iteration}"
        )
        self.iteration = iteration


class DivergenceError(NumericalError):
    """Iteration is blowing up."""


class SingularSystemError(NumericalError):
    """A small dense system could not be factored."""


class NotSymmetricError(NumericalError, ValueError):
    """Input to the symmetric eigensolver is not symmetric."""


class IllConditionedWarning(RuntimeWarning):
    """Squared-condition regime of the BB^T eigendecomposition."""
