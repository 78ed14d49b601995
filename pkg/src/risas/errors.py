"""Exception types raised by the solvers."""


class IllConditionedError(ArithmeticError):
    """A matrix that must be inverted is numerically singular."""


class InternalConsistencyError(RuntimeError):
    """A matrix that is positive definite by construction failed the check.

    This points at a bug upstream of the failing update, not at bad input.
    """


class NumericalFailure(RuntimeError):
    """An iterative numerical routine could not produce a result."""
