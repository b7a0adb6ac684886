# Utils package
from .errors import (
    AcceptanceFailure,
    ConfigurationError,
    DomainError,
    ExplosionGuardError,
    HawkesLabError,
    ModelValidationError,
    PrecisionWarning,
    StabilityViolation,
    UnsupportedPathError,
)

__all__ = [
    "AcceptanceFailure",
    "ConfigurationError",
    "DomainError",
    "ExplosionGuardError",
    "HawkesLabError",
    "ModelValidationError",
    "PrecisionWarning",
    "StabilityViolation",
    "UnsupportedPathError",
]
