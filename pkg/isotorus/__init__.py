# isotorus/__init__.py
import logging
from typing import Any, Optional

# --------------------
# consts
# --------------------

__version__ = "0.3.0"
CLI_EPILOG = """This CLI can also be used as a Python library:

    from isotorus.ifs import AffineIFS, iterate_bands
    from isotorus.equilibrium import solve_zeta

Every command writes CSV files into --out; --svg adds a rendered figure.

Enable shell completion with this command:
    eval "$(uvx --from argcomplete register-python-argcomplete %(prog)s)"
"""


# --------------------
# logger
# --------------------

logger = logging.getLogger(__name__)

# --- Custom Exceptions ---


class IsotorusError(Exception):
    """Base exception for isotorus errors."""

    pass


class IsotorusValidationError(IsotorusError, ValueError):
    """Raised when an input violates a precondition (geometry, indices, parameters)."""

    pass


class AtomBudgetError(IsotorusValidationError):
    """Raised when a discretization would exceed the configured atom budget."""

    def __init__(self, message: str, requested: Optional[int] = None, budget: Optional[int] = None):
        super().__init__(message)
        self.requested = requested
        self.budget = budget


class IsotorusNumericalError(IsotorusError):
    """Raised when a numerical method fails (non-convergence, lost positivity, ill-conditioning)."""

    def __init__(
        self,
        message: str,
        residual: Optional[float] = None,
        partial: Optional[Any] = None,
    ):
        super().__init__(message)
        self.residual = residual
        self.partial = partial

    def __str__(self) -> str:
        if self.residual is not None:
            return f"{super().__str__()} (last residual {self.residual:.3e})"
        return super().__str__()


class OrthogonalityLossError(IsotorusNumericalError):
    """Raised when a Lanczos run without stored basis is estimated to have lost semi-orthogonality."""

    pass
