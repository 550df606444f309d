"""Exception types shared across the package.

Exit-code mapping used by the CLI: InputError -> 2, DomainError -> 3,
anything else -> 1.
"""


class InputError(ValueError):
    """Malformed or out-of-contract input (bad JSON, bad shapes, bad config)."""


class DomainError(RuntimeError):
    """Input is well-formed but the requested operation is not meaningful
    for it (e.g. training on a single-class split)."""


class NumericalError(DomainError):
    """Numerically degenerate state (e.g. zero-norm scoring vector)."""
