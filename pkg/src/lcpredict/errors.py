"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Input violates a documented precondition or type invariant."""


class NoCandidate(DomainError):
    """Map matching found no road segment within the candidate radius."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-finite value, factorization failure)."""


class WarmUp(Exception):
    """Not enough history yet to produce a prediction frame."""
