"""Exception hierarchy shared by the numerical modules and the CLI."""


class TwoPhotonError(Exception):
    """Base class for all package errors."""


class ConfigError(TwoPhotonError, ValueError):
    """Invalid configuration or input file contents."""


class GridError(TwoPhotonError, ValueError):
    """A delay or frequency grid cannot represent the requested quantity."""


class NumericalError(TwoPhotonError, RuntimeError):
    """A numerical procedure failed (no root, no convergence, singular ratio)."""


class MatchingError(NumericalError):
    """No atom number balances the two-photon amplitudes."""


class FitError(NumericalError):
    """A fit did not converge or the data cannot constrain it."""
