"""Exception hierarchy shared by the library and the command-line tool."""


class TwoTierError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(TwoTierError, ValueError):
    """Malformed or inconsistent user input (shapes, columns, parameters)."""

    exit_code = 2


class NumericalError(TwoTierError, ArithmeticError):
    """A covariance matrix could not be factorized or an integral failed."""

    exit_code = 3


class FitError(TwoTierError):
    """Hyperparameter optimization failed on every restart.

    Attributes
    ----------
    best_params : ndarray or None
        Best log-hyperparameters seen before giving up.
    """

    exit_code = 4

    def __init__(self, message, best_params=None):
        super().__init__(message)
        self.best_params = best_params
