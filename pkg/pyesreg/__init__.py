# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.
import logging

import numpy as np

from ._version import __version__
from .covariance import CovOptions, estimate
from .errors import EsregError
from .fit import FitOptions, fit
from .speclib import (FAMILIES, AMode, G1Kind, G2Kind, JointParams, RegressionSample,
                      SpecificationFamily, pseudo_r2)

logger = logging.getLogger(__name__)


class esreg(object):
    """
    Joint linear regression of the conditional quantile (VaR) and Expected Shortfall at
    one probability level, fitted by M-estimation with a strictly consistent joint loss.
    """

    def __init__(self, y, x=None, alpha=0.025, family='neg-log', g1='zero', intercept=True,
                 fit_options=None):
        """
        Creates and fits a new model.\n
        :param y:
            responses, length n
        :param x:
            regressors (n x p) without the constant; None for the intercept-only model
        :param alpha:
            probability level in (0, 1)
        :param family:
            specification family name ('neg-inverse', 'neg-log', 'neg-sqrt',
            'logistic-log', 'exp') or a SpecificationFamily
        :param g1:
            'zero' or 'linear'
        :param intercept:
            prepend a constant column to x
        :param fit_options:
            FitOptions (estimator, ILS and Nelder-Mead settings, seed, translation)
        """
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise ValueError("No data given, the response is empty.")
        if x is None:
            design = np.ones((y.size, 1))
        else:
            x = np.asarray(x, dtype=float).reshape(y.size, -1)
            design = np.column_stack([np.ones(y.size), x]) if intercept else x
        self.sample = RegressionSample(y, design, intercept=intercept or x is None)
        self.alpha = float(alpha)
        self.family = family if isinstance(family, SpecificationFamily) \
            else SpecificationFamily.from_name(family, g1)
        self.fit_options = fit_options or FitOptions()
        self.result = fit(self.family, self.alpha, self.sample, self.fit_options)
        self._covariances = {}

    @property
    def coefficients(self):
        """:return: JointParams (theta_q, theta_e)"""
        return self.result.theta

    def covariance(self, density='nid', truncvar='scl-sp', bootstrap=0, seed=0, workers=1):
        """
        Estimated covariance matrix of the stacked coefficients (2k x 2k), cached per
        estimator choice.\n
        :param density: 'iid' or 'nid' sparsity estimator
        :param truncvar: 'ind', 'scl-N' or 'scl-sp' truncated-variance estimator
        :param bootstrap: number of bootstrap replicates; > 0 replaces the sandwich
        """
        covopts = CovOptions(density, truncvar, bootstrap, rng_seed=seed)
        if covopts not in self._covariances:
            self._covariances[covopts] = estimate(self.result, self.sample, self.family,
                                                  self.alpha, covopts, self.fit_options,
                                                  workers).matrix
        return self._covariances[covopts]

    def standard_errors(self, **kwargs):
        return np.sqrt(np.diag(self.covariance(**kwargs)))

    def predict(self, x=None):
        """
        VaR and ES predictions at new regressors (without the constant column).\n
        :return: (var, es) arrays
        """
        if x is None:
            design = self.sample.x
        else:
            x = np.atleast_2d(np.asarray(x, dtype=float))
            if self.sample.intercept and self.sample.k > 1:
                design = np.column_stack([np.ones(x.shape[0]), x])
            elif self.sample.k == 1:
                design = np.ones((x.shape[0], 1))
            else:
                design = x
        return self.result.theta.fitted(design)

    def pseudo_r2(self):
        """
        1 - average full-model loss / average intercept-only loss, with the non-negative
        choice of a(Y). Undefined (DomainError) when a negative-domain family meets Y >= 0.
        """
        restricted = fit(self.family, self.alpha, self.sample.intercept_only(), self.fit_options)
        return pseudo_r2(self.family, self.alpha, self.sample, self.result.theta,
                         restricted.theta)

    def __repr__(self):
        return "esreg(alpha=%g, family=%s, n=%d, k=%d, theta_q=%s, theta_e=%s)" % (
            self.alpha, self.family.name, self.sample.n, self.sample.k,
            np.round(self.result.theta.theta_q, 6).tolist(),
            np.round(self.result.theta.theta_e, 6).tolist())


__all__ = ['esreg', '__version__', 'EsregError', 'FitOptions', 'CovOptions', 'FAMILIES',
           'AMode', 'G1Kind', 'G2Kind', 'JointParams', 'RegressionSample',
           'SpecificationFamily']
