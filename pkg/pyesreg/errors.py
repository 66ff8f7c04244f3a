# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.errors
Exceptions raised by the estimation, covariance and evaluation code.

All of them derive from EsregError, so callers can catch one type; the ones that
signal bad input additionally derive from ValueError.
"""


class EsregError(Exception):
    """Base class of all pyesreg errors."""


class DomainError(EsregError, ValueError):
    """A specification function was evaluated outside its domain.

    :param row: index of the offending observation, or None for scalar input
    """

    def __init__(self, message, row=None):
        super().__init__(message if row is None else "%s (row %d)" % (message, row))
        self.row = row


class ConvergenceError(EsregError):
    """An optimizer or quadrature rule did not reach its tolerance."""


class DivergenceError(ConvergenceError):
    """The Z-estimator ran away (the ES coefficients exceeded the divergence bound)."""


class DegenerateSpacingError(EsregError):
    """The difference quotient of the sparsity estimator has zero spacing."""


class InsufficientTailError(EsregError):
    """Too few negative quantile residuals to estimate a truncated variance."""


class DegenerateKdeError(EsregError):
    """The standardized residuals have no spread, so no kernel density exists."""


class QuadratureError(EsregError):
    """Numerical integration produced a non-finite result."""


class SingularMatrixError(EsregError):
    """A matrix that has to be inverted is singular."""


class BootstrapError(EsregError):
    """Too many bootstrap replicates failed to fit."""

    def __init__(self, message, failures=0):
        super().__init__(message)
        self.failures = failures


class MisalignedTracksError(EsregError, ValueError):
    """Two forecast tracks do not cover the same dates."""


class EmptyDayError(EsregError, ValueError):
    """A day without intraday returns was passed to realized_volatility()."""


class DataFormatError(EsregError, ValueError):
    """An input file could not be parsed.

    :param line: 1-based line number in the input file, if known
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else "line %d: %s" % (line, message))
        self.line = line
