# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.fit
M- and Z-estimation of the joint quantile / ES regression parameters.

The M-estimator minimizes the average joint loss with an Iterated Local Search:
Nelder-Mead from quantile-regression starting values, then repeated re-optimization
from normally perturbed incumbents until the loss stalls for max_ils_stale rounds.
The Z-estimator minimizes the squared norm of the averaged estimating equations from
the same starting values. It is numerically unstable and diverges in many setups,
since psi redescends to zero as X'theta_e goes to minus infinity.

Functions:
  quantile_fit()      -- pinball-loss regression (starting values, nuisance fits)
  starting_values()   -- theta_q at alpha, theta_e at the normal-ES-matching level
  m_fit()             -- M-estimator (recommended)
  z_fit()             -- Z-estimator
  perturb()           -- ILS perturbation step
"""

import logging
from collections import namedtuple
from enum import Enum
from itertools import combinations

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import DegenerateSpacingError, DivergenceError, DomainError
from .speclib import AMode, JointParams, ProbabilityLevel, _losses, average_loss, mean_psi

logger = logging.getLogger(__name__)


class Estimator(Enum):
    M = 'm'
    Z = 'z'


class FitOptions(namedtuple('FitOptions', 'max_ils_stale nm_max_iter nm_tolerance rng_seed '
                                          'translate estimator divergence_bound')):
    """
    Options of m_fit() / z_fit().

    :param max_ils_stale: stop the ILS after this many consecutive non-improvements
    :param nm_max_iter: Nelder-Mead iteration budget, None for 500 * (2k)
    :param nm_tolerance: Nelder-Mead stops once loss spread and simplex diameter are
        both below this
    :param rng_seed: seed of the perturbation generator
    :param translate: fit on Y - max(Y); None means "for negative-domain families"
    :param estimator: 'm' or 'z' (used by callers that dispatch on it)
    :param divergence_bound: z_fit aborts once max|theta_e| exceeds this; None for
        100 * max(1, max|theta_e start|, sd(Y))
    """
    __slots__ = ()

    def __new__(cls, max_ils_stale=10, nm_max_iter=None, nm_tolerance=1e-8, rng_seed=0,
                translate=None, estimator=Estimator.M, divergence_bound=None):
        if int(max_ils_stale) < 1:
            raise ValueError("max_ils_stale must be >= 1")
        if not nm_tolerance > 0:
            raise ValueError("nm_tolerance must be positive")
        if nm_max_iter is not None and int(nm_max_iter) < 1:
            raise ValueError("nm_max_iter must be >= 1")
        return super().__new__(cls, int(max_ils_stale), nm_max_iter, float(nm_tolerance),
                               int(rng_seed), translate, Estimator(estimator),
                               divergence_bound)

    def max_iter_for(self, dim):
        return int(self.nm_max_iter) if self.nm_max_iter is not None else 500 * dim

    def translate_for(self, fam):
        return fam.requires_negative_es if self.translate is None else bool(self.translate)


# avg_loss and loss_path are on the working scale, the data minus translation_offset;
# theta is always on the scale of the input data.
FitResult = namedtuple('FitResult', 'theta avg_loss ils_iterations translation_offset converged '
                                    'psi_norm_at_solution estimator loss_path')

QuantileFit = namedtuple('QuantileFit', 'coef converged')


def _nelder_mead(objective, x0, opts):
    res = minimize(objective, x0, method='Nelder-Mead',
                   options={'maxiter': opts.max_iter_for(x0.size),
                            'xatol': opts.nm_tolerance,
                            'fatol': opts.nm_tolerance})
    return np.asarray(res.x, dtype=float), float(res.fun), res.status == 0


def _vertex_polish(objective, x, y, beta, loss):
    """
    Tries the basic solutions through k observations closest to the fit and keeps the
    lowest loss; among equal losses the lowest mean fitted value wins, which yields the
    left-continuous generalized inverse for intercept-only fits.
    """
    n, k = x.shape
    near = np.argsort(np.abs(y - x @ beta), kind='stable')[:min(n, 2 * k + 1)]
    xbar = x.mean(axis=0)
    tol = 1e-10 * max(1.0, abs(loss))
    best_beta, best_loss = beta, loss
    for rows in combinations(near, k):
        rows = list(rows)
        try:
            cand = np.linalg.solve(x[rows], y[rows])
        except np.linalg.LinAlgError:
            continue
        cand_loss = objective(cand)
        if cand_loss < best_loss - tol \
                or (cand_loss <= best_loss + tol and xbar @ cand < xbar @ best_beta):
            best_beta, best_loss = cand, cand_loss
    return best_beta, best_loss


def quantile_fit(sample, alpha, opts=None):
    """
    Linear quantile regression by minimizing the mean pinball loss with Nelder-Mead,
    started at the least-squares fit.

    :return: QuantileFit(coef, converged); converged is False when Nelder-Mead ran
        out of iterations
    """
    alpha = ProbabilityLevel(alpha)
    opts = opts or FitOptions()
    x, y = sample.x, sample.y

    def pinball(beta):
        u = y - x @ beta
        return float(np.mean(u * (alpha - (u < 0.0))))

    start = np.linalg.lstsq(x, y, rcond=None)[0]
    beta, loss, converged = _nelder_mead(pinball, start, opts)
    beta, loss = _vertex_polish(pinball, x, y, beta, loss)
    if not converged:
        logger.warning("Quantile regression at level %.4g did not converge", alpha)
    return QuantileFit(beta, converged)


def es_matching_level(alpha):
    """The level whose normal quantile equals the normal alpha-ES, Phi(-phi(z_alpha)/alpha)."""
    alpha = ProbabilityLevel(alpha)
    return float(norm.cdf(-norm.pdf(norm.ppf(alpha)) / alpha))


def _quantile_standard_errors(sample, alpha, coef):
    # iid sparsity: Var = alpha (1 - alpha) / f^2 (X'X)^-1
    from .covariance import density_iid, hall_sheather_bandwidth
    h = hall_sheather_bandwidth(alpha, sample.n)
    try:
        f = density_iid(sample.y - sample.x @ coef, alpha, h)
    except DegenerateSpacingError:
        scale = np.std(sample.y) / np.sqrt(sample.n)
        logger.warning("Sparsity estimate degenerate at level %.4g, perturbing with "
                       "sd(Y)/sqrt(n) = %.4g", alpha, scale)
        return np.full(sample.k, scale)
    xtx_inv = np.linalg.inv(sample.x.T @ sample.x)
    return np.sqrt(alpha * (1.0 - alpha) / f ** 2 * np.diag(xtx_inv))


def _initial_fit(sample, alpha, opts):
    alpha_tilde = es_matching_level(alpha)
    fit_q = quantile_fit(sample, alpha, opts)
    fit_e = quantile_fit(sample, alpha_tilde, opts)
    scales = np.concatenate([_quantile_standard_errors(sample, alpha, fit_q.coef),
                             _quantile_standard_errors(sample, alpha_tilde, fit_e.coef)])
    return JointParams(fit_q.coef, fit_e.coef), scales


def starting_values(sample, alpha, opts=None):
    """
    theta_q from a quantile regression at alpha, theta_e from one at
    alpha~ = Phi(-phi(z_alpha)/alpha), where the normal quantile and ES coincide.
    """
    if np.ptp(sample.y) == 0.0:
        return _degenerate_params(sample)
    return _initial_fit(sample, ProbabilityLevel(alpha), opts or FitOptions())[0]


def perturb(theta, scales, rng):
    """theta plus independent N(0, scales[j]^2) noise on every stacked coordinate."""
    vector = theta.stack()
    return JointParams.from_vector(vector + rng.normal(0.0, 1.0, vector.size) * scales)


def _degenerate_params(sample):
    coef = np.zeros(sample.k)
    coef[0] = sample.y[0]
    return JointParams(coef, coef)


def _feasible_start(fam, sample, theta):
    e = sample.x @ theta.theta_e
    if fam.is_feasible(e):
        return theta
    if not sample.intercept:
        raise DomainError("Starting values give X'theta_e >= 0 and the design has no "
                          "intercept to shift", int(np.argmax(e >= 0.0)))
    margin = max(1e-3, 0.1 * np.std(sample.y))
    theta_e = theta.theta_e.copy()
    theta_e[0] -= e.max() + margin
    logger.debug("Shifted ES starting intercept by %.4g into the domain", -(e.max() + margin))
    return JointParams(theta.theta_q, theta_e)


class _Objective(object):
    """Average loss (M) or squared norm of the averaged psi (Z); +inf outside the domain."""

    def __init__(self, fam, alpha, sample, estimator):
        self.fam, self.alpha, self.sample = fam, alpha, sample
        self.estimator = estimator
        self.k = sample.k

    def __call__(self, vector):
        x = self.sample.x
        e = x @ vector[self.k:]
        if not self.fam.is_feasible(e):
            return np.inf
        with np.errstate(over='ignore', invalid='ignore'):
            if self.estimator is Estimator.M:
                q = x @ vector[:self.k]
                value = np.mean(_losses(self.fam, self.alpha, self.sample.y, q, e, AMode.ZERO))
            else:
                psi = mean_psi(self.fam, self.alpha, self.sample, JointParams.from_vector(vector))
                value = psi @ psi
        return float(value) if np.isfinite(value) else np.inf


def _degenerate_fit(fam, alpha, sample, estimator):
    theta = _degenerate_params(sample)
    e = sample.x @ theta.theta_e
    if fam.is_feasible(e):
        loss = average_loss(fam, alpha, sample, theta)
        psi_norm = float(np.linalg.norm(mean_psi(fam, alpha, sample, theta)))
    else:
        loss, psi_norm = 0.0, float('nan')
    logger.debug("Constant response, returning the degenerate fixed point %.6g", sample.y[0])
    return FitResult(theta, loss, 0, 0.0, True, psi_norm, estimator, [loss])


def _fit(fam, alpha, sample, opts, estimator):
    alpha = ProbabilityLevel(alpha)
    if np.ptp(sample.y) == 0.0:
        return _degenerate_fit(fam, alpha, sample, estimator)

    translate = opts.translate_for(fam)
    if translate and not sample.intercept:
        logger.warning("Design without intercept, fitting untranslated data")
        translate = False
    offset = float(sample.y.max()) if translate else 0.0
    work = sample.translated(offset) if translate else sample

    start, scales = _initial_fit(work, alpha, opts)
    start = _feasible_start(fam, work, start)
    objective = _Objective(fam, alpha, work, estimator)
    rng = np.random.default_rng(opts.rng_seed)

    bound = opts.divergence_bound
    if bound is None:
        bound = 100.0 * max(1.0, np.abs(start.theta_e).max(), np.std(work.y))

    def local_search(x0):
        x_opt, f_opt, ok = _nelder_mead(objective, x0, opts)
        if estimator is Estimator.Z and np.abs(x_opt[work.k:]).max() > bound:
            raise DivergenceError("Z-estimator diverged: max|theta_e| = %.4g exceeds %.4g"
                                  % (np.abs(x_opt[work.k:]).max(), bound))
        return x_opt, f_opt, ok

    x_best, f_best, converged = local_search(start.stack())
    loss_path = [f_best]
    stale, iterations = 0, 0
    while stale < opts.max_ils_stale:
        iterations += 1
        x0 = perturb(JointParams.from_vector(x_best), scales, rng).stack()
        if not np.isfinite(objective(x0)):
            stale += 1
            continue
        x_new, f_new, ok = local_search(x0)
        if f_new < f_best:
            x_best, f_best, converged = x_new, f_new, ok
            loss_path.append(f_best)
            stale = 0
        else:
            stale += 1

    if estimator is Estimator.M:
        k = work.k
        theta_e = x_best[k:]

        def q_objective(beta):
            return objective(np.concatenate([beta, theta_e]))

        theta_q, f_best = _vertex_polish(q_objective, work.x, work.y, x_best[:k], f_best)
        x_best = np.concatenate([theta_q, theta_e])

    if not converged:
        logger.warning("Nelder-Mead did not converge for %r at alpha=%.4g, returning the "
                       "best iterate", fam, alpha)
    theta = JointParams.from_vector(x_best)
    psi_norm = float(np.linalg.norm(mean_psi(fam, alpha, work, theta)))
    if translate:
        theta = theta.shift_intercepts(offset)
    logger.debug("%s-fit of %r: loss %.8g after %d ILS iterations", estimator.value.upper(),
                 fam, f_best, iterations)
    return FitResult(theta, f_best, iterations, offset, converged, psi_norm, estimator,
                     loss_path)


def m_fit(fam, alpha, sample, opts=None):
    """
    M-estimator: minimizes the average joint loss by Iterated Local Search.

    :param fam: SpecificationFamily
    :param alpha: probability level in (0, 1)
    :param sample: RegressionSample
    :param opts: FitOptions
    :return: FitResult; theta is on the scale of the untranslated data, avg_loss is the
        average loss on the translated working sample
    """
    return _fit(fam, alpha, sample, opts or FitOptions(), Estimator.M)


def z_fit(fam, alpha, sample, opts=None):
    """
    Z-estimator: minimizes ||mean psi||^2 from the M-estimator's starting values.
    Numerically unstable, diverges in many setups.

    :raises: DivergenceError once max|theta_e| exceeds opts.divergence_bound
    """
    return _fit(fam, alpha, sample, opts or FitOptions(estimator=Estimator.Z), Estimator.Z)


def fit(fam, alpha, sample, opts=None):
    """Dispatches on opts.estimator."""
    opts = opts or FitOptions()
    return _fit(fam, alpha, sample, opts, opts.estimator)
