"""Error taxonomy shared across modules.

Each class corresponds to one contract violation; the CLI maps them to
distinct exit codes (see ``cli.py``).
"""


class CookieWalkError(Exception):
    """Base class for all package errors."""


class MalformedConfig(CookieWalkError):
    """A configuration document has missing, extra, or ill-typed keys."""


class RejectP1Half(CookieWalkError):
    """The p law is the point mass at 1/2 (degenerate odds ratio)."""


class RejectNoZeroCookies(CookieWalkError):
    """The cookie law puts no mass on zero cookies."""


class RejectMomentBlowup(CookieWalkError):
    """The p law has an infinite second odds-ratio moment."""


class OutOfDomain(CookieWalkError):
    """An argument lies outside the guaranteed-finite domain."""


class RegimeMismatch(CookieWalkError):
    """An operation was invoked outside its classification regime."""


class NoConvergence(CookieWalkError):
    """An iterative solver exhausted its budget."""


class NotTransientEnough(CookieWalkError):
    """Too few confirmed regenerations to form gap statistics."""


class InvalidGap(CookieWalkError):
    """Downcrossing counts requested for a non-gap pair of times."""


class CouplingPreconditionFailed(CookieWalkError):
    """Coupled branching runs need zero cookies at the first site."""


class NotCookieFree(CookieWalkError):
    """A cookie-free-only classifier received a cookied law."""


class UnsupportedMLaw(CookieWalkError):
    """The cookie law has finite nonzero atoms where only {0, inf} is allowed."""
