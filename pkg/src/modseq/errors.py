"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, unknown keys, non-compressible stacks."""


class InputError(ValueError):
    """Invalid input data (empty sequences, out-of-range token ids, ...)."""


class NumericError(ArithmeticError):
    """Non-finite loss or gradient."""

    def __init__(self, message, last_finite_state=None, step=None):
        super().__init__(message)
        self.last_finite_state = last_finite_state
        self.step = step


class BudgetInfeasible(ValueError):
    """No assembly satisfies the requested budget."""

    def __init__(self, message, max_achievable=None):
        super().__init__(message)
        self.max_achievable = max_achievable
