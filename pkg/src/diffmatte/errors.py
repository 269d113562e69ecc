"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation is defined on."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""
