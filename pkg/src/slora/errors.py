"""Exception hierarchy shared by the analytic, uncertainty and simulation code."""

from __future__ import annotations


class SloraError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SloraError, ValueError):
    """An argument lies outside the domain of the operation."""


class SyncIntervalError(ParameterError):
    """The synchronization interval cannot hold a single slot plus the phase guard."""


class DutyCycleError(ParameterError):
    """Traffic parameters violate the duty-cycle constraint."""


class TailMassError(ParameterError):
    """A truncated Poisson series leaves too much probability mass in its tail."""


class AccountingError(SloraError):
    """Counters are mutually inconsistent (e.g. more receptions than transmissions)."""


class ConfigError(SloraError):
    """A configuration file is malformed or contains unknown or invalid fields."""


class BracketFallbackWarning(RuntimeWarning):
    """Root bracketing failed and a grid-search result was returned instead."""
