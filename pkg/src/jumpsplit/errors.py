"""Exception hierarchy shared by all modules."""


class ParameterError(ValueError):
    """An argument lies outside its documented domain."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class SingularSystemError(NumericError):
    """Cholesky factorization failed even after ridge escalation."""

    def __init__(self, message: str, ridge: float):
        super().__init__(message)
        self.ridge = ridge


class SamplerError(NumericError):
    """A rejection sampler exceeded its attempt budget."""


class BudgetExceeded(RuntimeError):
    """Projected oracle cost is above the refusal threshold."""

    def __init__(self, message: str, projected_evals: float):
        super().__init__(message)
        self.projected_evals = projected_evals


class InfeasibleError(RuntimeError):
    """No parameter on the search grid satisfies the requested inequality."""
