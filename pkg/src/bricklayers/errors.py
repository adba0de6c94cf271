"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class BricklayersError(Exception):
    """Base class for every error raised by this package."""


class RateRangeError(BricklayersError, OverflowError):
    """A rate or rate factorial would overflow double precision."""


class ThetaRangeError(BricklayersError, ValueError):
    """A parameter or density lies outside the attainable range."""


class ConvergenceError(BricklayersError, ArithmeticError):
    """A truncated partition sum did not converge inside its support cap."""


class ProfileError(BricklayersError, ValueError):
    """A parameter or hydrodynamic profile violates its structural invariants."""


class ComplexityError(BricklayersError, ValueError):
    """A requested exact computation would exceed its size guard."""


class OmegaCapError(BricklayersError, RuntimeError):
    """A simulated slope left the configured safety bound."""


class ConfigError(BricklayersError, ValueError):
    """An experiment configuration could not be parsed or validated."""
