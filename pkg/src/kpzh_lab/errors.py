"""Exception hierarchy shared by every module.

Each error subclasses ``ValueError`` where the failure is a bad argument, so
callers that only care about "invalid input" can catch the builtin.
"""

from __future__ import annotations


class KpzhLabError(Exception):
    """Base class for all package errors."""


class NonAlignedBounds(KpzhLabError, ValueError):
    """Grid endpoints or the origin do not fall on the lattice."""


class DegenerateGrid(KpzhLabError, ValueError):
    """Grid has fewer than three nodes."""


class OffGrid(KpzhLabError, ValueError):
    """A requested coordinate is not a grid node."""


class DomainExceeded(KpzhLabError, ValueError):
    """A rescaled coordinate falls outside the source grid."""


class WindowTooSmall(KpzhLabError, ValueError):
    """Fewer than the minimum number of nodes in an estimation window."""


class EmptyRange(KpzhLabError, ValueError):
    """An integral was requested over an empty range."""


class DriftGapViolated(KpzhLabError, ValueError):
    """The estimated drift gap is not positive, so the integrals diverge."""


class TailTooHeavy(KpzhLabError, ValueError):
    """The truncated left tail carries non-negligible mass."""


class TooFewSamples(KpzhLabError, ValueError):
    """A statistical test received too few observations."""


class DomainError(KpzhLabError, ValueError):
    """A special-function parameter is outside its domain."""


class OrderViolated(KpzhLabError, ValueError):
    """Level or coordinate ordering required by a partition function fails."""


class QuadratureNonconvergent(KpzhLabError, RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


class TooLarge(KpzhLabError, ValueError):
    """A brute-force enumeration would exceed its size guard."""
