"""Exception types raised across qmemsim.

All of them derive from :class:`QMemError` so callers (the CLI in particular)
can map failures onto exit codes without string matching.
"""


class QMemError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(QMemError, ValueError):
    """Malformed input: empty sequences, wrong shapes, bad config keys."""


class DomainError(QMemError, ValueError):
    """Argument outside the mathematical domain of a function."""


class RangeError(QMemError, ValueError):
    """A requested window or scan range does not fit the available data."""


class AmbiguityError(QMemError, ValueError):
    """A width measurement is ill defined (several maxima, peak at an edge)."""


class NumericalError(QMemError, RuntimeError):
    """Base for failures of a numerical procedure."""


class ResolutionError(NumericalError):
    """Simulation grid too coarse for one of the physical time scales."""


class DivergenceError(NumericalError):
    """Non-finite values appeared in the integrated state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FitError(NumericalError):
    """Least-squares fit did not converge. ``best`` holds the best point seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateSeedError(NumericalError):
    """Pulse shaping seed has no overlap with the storable mode."""
