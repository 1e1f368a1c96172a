"""
Base exceptions for voltrisk.

Module-specific exception families live next to the code that raises them
and all derive from VoltRiskError, so callers (the CLI in particular) can
catch a single type.
"""


class VoltRiskError(Exception):
    """Base exception for all voltrisk errors."""
    pass


class DimensionMismatchError(VoltRiskError):
    """Raised when vector or matrix dimensions do not agree."""
    pass


def check_length(name: str, actual: int, expected: int) -> None:
    """
    Raise DimensionMismatchError unless a length matches.

    Args:
        name: Name of the offending argument, used in the message
        actual: Observed length
        expected: Required length
    """
    if actual != expected:
        raise DimensionMismatchError(
            f"{name} has length {actual}, expected {expected}"
        )
