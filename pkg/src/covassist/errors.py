"""Exception types raised across the package."""


class CaseError(Exception):
    """Base class for all package errors."""


class InvalidDimension(CaseError, ValueError):
    pass


class InvalidParameter(CaseError, ValueError):
    pass


class InvalidFilter(CaseError, ValueError):
    pass


class InvalidInput(CaseError, ValueError):
    pass


class NumericFailure(CaseError, ArithmeticError):
    """A factorization or solve failed; ``detail`` carries diagnostics."""

    def __init__(self, message, **detail):
        super().__init__(message)
        self.detail = detail


class ComponentTooLarge(CaseError):
    def __init__(self, size, cap):
        super().__init__(f"component of size {size} exceeds cap {cap}")
        self.size = size
        self.cap = cap


class NoSignalDetected(CaseError, ValueError):
    pass
