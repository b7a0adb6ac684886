"""
Exception hierarchy shared by every package.

The CLI maps these onto exit codes (see harness/cli.py):
validation-type errors exit 2, acceptance failures exit 3.
"""
from typing import Any, Dict, Optional


class HawkesLabError(Exception):
    """Base class for all errors raised by this project."""


class DomainError(HawkesLabError, ValueError):
    """A numeric argument lies outside the domain of the operation."""


class ModelValidationError(HawkesLabError, ValueError):
    """A kernel, mark model or nonlinearity violates its invariants."""


class StabilityViolation(ModelValidationError):
    """alpha * m_b1 * ||phi||_1 >= 1: the process is not subcritical."""

    def __init__(self, rho: float, message: Optional[str] = None):
        self.rho = rho
        super().__init__(message or f"stability violated: rho = {rho:.6g} >= 1")


class ConfigurationError(HawkesLabError, ValueError):
    """Bad configuration key, value or experiment layout."""


class ExplosionGuardError(HawkesLabError):
    """A simulated path produced more events than the configured cap."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)


class UnsupportedPathError(HawkesLabError):
    """The path cannot be replayed (no candidate log or foreign field)."""


class AcceptanceFailure(HawkesLabError):
    """A control cell or an acceptance check did not pass."""


class PrecisionWarning(UserWarning):
    """Monte Carlo standard error above the configured tolerance."""
