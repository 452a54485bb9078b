"""
Exception hierarchy for paramp
"""

from typing import Optional


class ParampError(Exception):
    """Base class for all errors raised by paramp"""


class ConfigError(ParampError, ValueError):
    """Invalid parameters or configuration input (CLI exit code 2)"""


class NumericalError(ParampError, ArithmeticError):
    """Instability, blow-up or other numerical failure (CLI exit code 3)"""


class ConvergenceError(NumericalError):
    """An iterative procedure did not reach its tolerance"""

    def __init__(self, message: str, residual: Optional[float] = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual
