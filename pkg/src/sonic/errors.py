"""Exception hierarchy.

Every error raised on bad inputs or failed numerics derives from
:class:`SonicError`, so callers (the CLI in particular) can map domain
failures to a single exit code.
"""

from __future__ import annotations


class SonicError(Exception):
    """Base class for all domain errors."""


class InvalidClustering(SonicError):
    pass


class EmptyCluster(InvalidClustering):
    pass


class DimensionMismatch(SonicError, ValueError):
    pass


class InvalidPanel(SonicError, ValueError):
    pass


class ZeroFrequency(SonicError):
    """A node that is never observed; the corrected moments would divide by zero."""

    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"node(s) never observed: {', '.join(map(str, self.nodes))}")


class InsufficientSamples(SonicError):
    pass


class NumericalFailure(SonicError):
    pass


class DegenerateDiagonal(SonicError):
    pass


class NonConvergence(SonicError):
    """Coordinate descent hit ``max_sweeps``; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleSparsity(SonicError):
    pass


class UnstableOperator(SonicError):
    pass


class TooManyClusters(SonicError):
    pass


class GuardTripped(SonicError):
    pass


class SingularGram(SonicError):
    pass


def annotate(exc: BaseException, context: str) -> BaseException:
    """Prefix ``exc``'s message with ``context`` and return it for re-raising."""
    exc.args = (f"{context}: {exc}",) + exc.args[1:]
    return exc
