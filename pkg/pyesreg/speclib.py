# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.speclib
Evaluation kernels of the joint quantile / Expected Shortfall regression: the
specification functions (G1, curly G2), the strictly consistent joint loss rho,
its estimating equations psi and the pseudo-R2.

Functions:
  eval_spec()              -- G1, G1', G2, G2', curly G2 of a family at z
  joint_loss()             -- rho(Y, X, theta) for one observation
  joint_losses()           -- rho for every row of a sample (vectorized)
  average_loss()           -- mean of rho over a sample
  estimating_equations()   -- psi(Y, X, theta) for one observation
  psi_matrix()             -- psi for every row of a sample (n x 2k)
  pseudo_r2()              -- 1 - full-model loss / intercept-model loss

Every function here is pure; nothing holds state between calls.
"""

import logging
from collections import namedtuple
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import DomainError, SingularMatrixError

logger = logging.getLogger(__name__)


class ProbabilityLevel(float):
    """A float restricted to the open unit interval."""

    def __new__(cls, alpha):
        value = float(alpha)
        if not 0.0 < value < 1.0:
            raise ValueError("Probability level must lie in (0, 1), got %r" % (alpha,))
        return super().__new__(cls, value)


class G1Kind(Enum):
    ZERO = 'zero'
    LINEAR = 'linear'


class G2Kind(Enum):
    NEG_INVERSE = 'neg-inverse'    # curly G2(z) = -1/z,        homogeneous of order -1
    NEG_LOG = 'neg-log'            # curly G2(z) = -log(-z),    order 0 (loss differences)
    NEG_SQRT = 'neg-sqrt'          # curly G2(z) = -sqrt(-z),   order 1/2
    LOGISTIC_LOG = 'logistic-log'  # curly G2(z) = log(1 + e^z), G2 is the logistic cdf
    EXP = 'exp'                    # curly G2(z) = e^z
    # G2 == 0 drops the ES part of the loss. Together with a linear G1 it reduces the
    # joint loss to the pinball loss; only meant for the quantile-regression nesting.
    ZERO = 'zero'


class AMode(Enum):
    ZERO = 'zero'
    NON_NEGATIVE = 'non-negative'


# (curly G2, G2, G2') per kind; inputs are assumed to be inside the domain
_G2_TABLE = {
    G2Kind.NEG_INVERSE: (lambda z: -1.0 / z,
                         lambda z: 1.0 / z ** 2,
                         lambda z: -2.0 / z ** 3),
    G2Kind.NEG_LOG: (lambda z: -np.log(-z),
                     lambda z: -1.0 / z,
                     lambda z: 1.0 / z ** 2),
    G2Kind.NEG_SQRT: (lambda z: -np.sqrt(-z),
                      lambda z: 0.5 / np.sqrt(-z),
                      lambda z: 0.25 * (-z) ** -1.5),
    G2Kind.LOGISTIC_LOG: (lambda z: np.logaddexp(0.0, z),
                          expit,
                          lambda z: expit(z) * expit(-z)),
    G2Kind.EXP: (np.exp, np.exp, np.exp),
    G2Kind.ZERO: (np.zeros_like, np.zeros_like, np.zeros_like),
}

_HOMOGENEITY_ORDER = {G2Kind.NEG_INVERSE: -1.0, G2Kind.NEG_LOG: 0.0, G2Kind.NEG_SQRT: 0.5}

SpecValues = namedtuple('SpecValues', 'g1 g1p g2 g2p curly_g2')


class SpecificationFamily(object):
    """
    The pair (G1, curly G2) parameterizing the joint loss and its estimating equations.
    Constants of the homogeneous families are fixed to their canonical values.

    :param g2_kind: a G2Kind or its name, e.g. 'neg-log'
    :param g1_kind: a G1Kind or its name; 'zero' unless testing the nesting of
        quantile regression
    """

    def __init__(self, g2_kind, g1_kind=G1Kind.ZERO):
        self.g2_kind = G2Kind(g2_kind)
        self.g1_kind = G1Kind(g1_kind)

    @property
    def requires_negative_es(self):
        return self.g2_kind in _HOMOGENEITY_ORDER

    @property
    def homogeneity_order(self):
        """Order b of positive homogeneity, None if the loss is not homogeneous."""
        if self.g1_kind is not G1Kind.ZERO:
            return None
        return _HOMOGENEITY_ORDER.get(self.g2_kind)

    @property
    def name(self):
        return self.g2_kind.value

    def check_domain(self, z):
        """Raises DomainError at the first z >= 0 for the negative-domain families."""
        if not self.requires_negative_es:
            return
        z = np.asarray(z, dtype=float)
        bad = np.flatnonzero(~(z.ravel() < 0.0))
        if bad.size:
            row = int(bad[0]) if z.ndim else None
            raise DomainError("%s is only defined for negative arguments, got %r"
                              % (self.name, float(z.ravel()[bad[0]])), row)

    def is_feasible(self, z):
        return not self.requires_negative_es or bool(np.all(z < 0.0))

    def g1(self, z):
        z = np.asarray(z, dtype=float)
        return z.copy() if self.g1_kind is G1Kind.LINEAR else np.zeros_like(z)

    def g1p(self, z):
        z = np.asarray(z, dtype=float)
        return np.ones_like(z) if self.g1_kind is G1Kind.LINEAR else np.zeros_like(z)

    def g2(self, z):
        return _G2_TABLE[self.g2_kind][1](np.asarray(z, dtype=float))

    def g2p(self, z):
        return _G2_TABLE[self.g2_kind][2](np.asarray(z, dtype=float))

    def curly_g2(self, z):
        return _G2_TABLE[self.g2_kind][0](np.asarray(z, dtype=float))

    def evaluate(self, z):
        self.check_domain(z)
        values = (self.g1(z), self.g1p(z), self.g2(z), self.g2p(z), self.curly_g2(z))
        if np.ndim(z) == 0:
            values = [float(v) for v in values]
        return SpecValues(*values)

    @classmethod
    def from_name(cls, name, g1='zero'):
        return cls(name.replace('_', '-').lower(), g1)

    def __eq__(self, other):
        return isinstance(other, SpecificationFamily) \
            and (self.g1_kind, self.g2_kind) == (other.g1_kind, other.g2_kind)

    def __hash__(self):
        return hash((self.g1_kind, self.g2_kind))

    def __repr__(self):
        return "SpecificationFamily(%s, g1=%s)" % (self.g2_kind.value, self.g1_kind.value)


# the five families compared throughout, in reporting order
FAMILIES = tuple(SpecificationFamily(kind) for kind in (G2Kind.NEG_LOG, G2Kind.NEG_SQRT,
                                                        G2Kind.NEG_INVERSE,
                                                        G2Kind.LOGISTIC_LOG, G2Kind.EXP))


class JointParams(object):
    """The stacked parameter vector (theta_q, theta_e), both of length k."""
    __slots__ = ('theta_q', 'theta_e')

    def __init__(self, theta_q, theta_e):
        theta_q = np.array(theta_q, dtype=float, ndmin=1)
        theta_e = np.array(theta_e, dtype=float, ndmin=1)
        if theta_q.ndim != 1 or theta_q.shape != theta_e.shape or theta_q.size < 1:
            raise ValueError("theta_q and theta_e need the same length k >= 1, got %s and %s"
                             % (theta_q.shape, theta_e.shape))
        self.theta_q = theta_q
        self.theta_e = theta_e

    @property
    def k(self):
        return self.theta_q.size

    def stack(self):
        return np.concatenate([self.theta_q, self.theta_e])

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector, dtype=float)
        if vector.ndim != 1 or vector.size % 2:
            raise ValueError("Stacked parameter vector must have even length 2k")
        k = vector.size // 2
        return cls(vector[:k], vector[k:])

    def shift_intercepts(self, offset):
        """Adds offset to both intercepts (first coefficients)."""
        q, e = self.theta_q.copy(), self.theta_e.copy()
        q[0] += offset
        e[0] += offset
        return JointParams(q, e)

    def fitted(self, x):
        """:return: (X theta_q, X theta_e)"""
        return x @ self.theta_q, x @ self.theta_e

    def __eq__(self, other):
        return isinstance(other, JointParams) and np.array_equal(self.stack(), other.stack())

    def __repr__(self):
        return "JointParams(theta_q=%s, theta_e=%s)" % (list(self.theta_q), list(self.theta_e))


class RegressionSample(object):
    """
    Responses y (length n) and design x (n x k).

    :param y: responses
    :param x: design matrix; defaults to a single constant column
    :param intercept: the first column of x is the constant 1
    :param check: enforce n > k and full column rank
    """

    def __init__(self, y, x=None, intercept=True, check=True):
        y = np.array(y, dtype=float, ndmin=1).ravel()
        x = np.ones((y.size, 1)) if x is None else np.array(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError("Design has %s rows for %d responses" % (x.shape[:1], y.size))
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("Sample contains non-finite values")
        if intercept and not np.all(x[:, 0] == 1.0):
            raise ValueError("First design column must be the constant 1")
        if check:
            if y.size <= x.shape[1]:
                raise ValueError("Need more observations than regressors (n=%d, k=%d)"
                                 % (y.size, x.shape[1]))
            if np.linalg.matrix_rank(x) < x.shape[1]:
                raise SingularMatrixError("Design matrix does not have full column rank")
        self.y = y
        self.x = x
        self.intercept = intercept

    @property
    def n(self):
        return self.y.size

    @property
    def k(self):
        return self.x.shape[1]

    def translated(self, offset):
        """The sample with offset subtracted from every response."""
        return RegressionSample(self.y - offset, self.x, self.intercept, check=False)

    def rows(self, index, check=True):
        return RegressionSample(self.y[index], self.x[index], self.intercept, check=check)

    def intercept_only(self):
        return RegressionSample(self.y, self.x[:, :1], self.intercept, check=False)

    def __repr__(self):
        return "RegressionSample(n=%d, k=%d)" % (self.n, self.k)


def eval_spec(fam, z):
    """
    :return: SpecValues(g1, g1p, g2, g2p, curly_g2) of the family at z
    :raises: DomainError when z >= 0 for a negative-domain family
    """
    return fam.evaluate(z)


def _losses(fam, alpha, y, q, e, a_mode):
    hit = (y <= q).astype(float)
    loss = (hit - alpha) * fam.g1(q) - hit * fam.g1(y) \
        + fam.g2(e) * (e - q + (q - y) * hit / alpha) - fam.curly_g2(e)
    if a_mode is AMode.NON_NEGATIVE:
        loss += alpha * fam.g1(y) + fam.curly_g2(y)
    return loss


def joint_losses(fam, alpha, y, x, theta, a_mode=AMode.ZERO):
    """
    rho(Y_i, X_i, theta) for all rows.

    :param y: responses, length n
    :param x: design, n x k
    :param theta: JointParams
    :param a_mode: AMode.ZERO, or AMode.NON_NEGATIVE for a(Y) = alpha G1(Y) + curly G2(Y)
    :raises: DomainError naming the first row with X'theta_e >= 0 (negative-domain
        families), or with Y >= 0 when a_mode is NON_NEGATIVE
    """
    alpha = ProbabilityLevel(alpha)
    a_mode = AMode(a_mode)
    y = np.asarray(y, dtype=float)
    q, e = theta.fitted(np.asarray(x, dtype=float))
    fam.check_domain(e)
    if a_mode is AMode.NON_NEGATIVE:
        fam.check_domain(y)
    return _losses(fam, alpha, y, q, e, a_mode)


def joint_loss(fam, alpha, y, xrow, theta, a_mode=AMode.ZERO):
    """rho(y, x, theta) for a single observation."""
    xrow = np.asarray(xrow, dtype=float).reshape(1, -1)
    return float(joint_losses(fam, alpha, np.array([y], dtype=float), xrow, theta, a_mode)[0])


def average_loss(fam, alpha, sample, theta, a_mode=AMode.ZERO):
    """Arithmetic mean of rho over the rows of a RegressionSample."""
    return float(np.mean(joint_losses(fam, alpha, sample.y, sample.x, theta, a_mode)))


def psi_matrix(fam, alpha, y, x, theta):
    """
    Estimating equations for all rows; column j < k holds psi_1, j >= k psi_2.
    At the kink Y = X'theta_q the indicator 1{Y <= X'theta_q} is taken as 1.
    """
    alpha = ProbabilityLevel(alpha)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    q, e = theta.fitted(x)
    fam.check_domain(e)
    hit = (y <= q).astype(float)
    w1 = (hit - alpha) / alpha * (alpha * fam.g1p(q) + fam.g2(e))
    w2 = fam.g2p(e) * (e - q + (q - y) * hit / alpha)
    return np.hstack([x * w1[:, None], x * w2[:, None]])


def estimating_equations(fam, alpha, y, xrow, theta):
    """psi(y, x, theta) = (psi_1, psi_2) stacked, for a single observation."""
    xrow = np.asarray(xrow, dtype=float).reshape(1, -1)
    return psi_matrix(fam, alpha, np.array([y], dtype=float), xrow, theta)[0]


def mean_psi(fam, alpha, sample, theta):
    return psi_matrix(fam, alpha, sample.y, sample.x, theta).mean(axis=0)


def pseudo_r2(fam, alpha, sample, theta_full, theta_intercept):
    """
    R^QE = 1 - rho(Y, X, theta_full) / rho(Y, 1, theta_intercept), both averaged with
    the non-negative choice of a(Y).

    :param theta_intercept: JointParams of the intercept-only model (k=1), or of the
        same dimension as theta_full
    :raises: ZeroDivisionError if the intercept model has zero average loss
    """
    restricted = sample.intercept_only() if theta_intercept.k == 1 else sample
    full = average_loss(fam, alpha, sample, theta_full, AMode.NON_NEGATIVE)
    base = average_loss(fam, alpha, restricted, theta_intercept, AMode.NON_NEGATIVE)
    if base == 0.0:
        raise ZeroDivisionError("Intercept-only model has zero average loss, "
                                "pseudo-R2 is undefined")
    return 1.0 - full / base
