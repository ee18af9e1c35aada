"""Exception and warning types shared across the toolkit."""


class ContractError(ValueError):
    """An input violates an operation's precondition (shape, range, symmetry...)."""


class NumericalError(ArithmeticError):
    """A computation produced or received non-finite values and was aborted."""


class GenerationError(RuntimeError):
    """Synthetic-world construction failed (e.g. rank-deficient mixing map)."""


class FrozenParameterError(RuntimeError):
    """Attempted update of a frozen checkpoint's parameters."""


class DegenerateVectorWarning(UserWarning):
    """A (near-)zero-norm vector entered a similarity computation; the
    convention sim = 0 was applied instead of producing NaN."""
