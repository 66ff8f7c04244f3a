# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.covariance
Asymptotic covariance of the joint estimator, Lambda^-1 C Lambda^-1 / n, by plug-in
nuisance estimators or by the nonparametric iid bootstrap.

Nuisance quantities entering the plug-in sandwich:
  * the conditional density of Y at the quantile, f(X'theta_q):
      iid  -- one difference quotient of the empirical residual quantile function
      nid  -- per-row difference quotients of two shifted quantile regressions
  * the conditional truncated variance Var(Y - X'theta_q | Y <= X'theta_q, X):
      ind    -- one sample variance of the negative quantile residuals
      scl-N  -- location-scale model u = X'zeta + X'phi * eps, eps ~ N(0, 1)
      scl-sp -- same location-scale model, eps density by Gaussian KDE
"""

import logging
from collections import namedtuple
from enum import Enum

import numpy as np
from scipy import integrate, stats
from scipy.optimize import minimize

from . import _pool
from .errors import (BootstrapError, ConvergenceError, DegenerateKdeError, DegenerateSpacingError,
                     EsregError, InsufficientTailError, QuadratureError, SingularMatrixError)
from .speclib import G2Kind, ProbabilityLevel

logger = logging.getLogger(__name__)

# positivity guard of the nid difference quotient
NID_DELTA = 1e-10


class DensityMethod(Enum):
    IID = 'iid'
    NID = 'nid'


class TruncVarMethod(Enum):
    IND = 'ind'
    SCL_N = 'scl-N'
    SCL_SP = 'scl-sp'


class CovOptions(namedtuple('CovOptions', 'density truncvar bootstrap_reps bandwidth_eta rng_seed')):
    """
    :param density: DensityMethod or its name ('iid', 'nid')
    :param truncvar: TruncVarMethod or its name ('ind', 'scl-N', 'scl-sp')
    :param bootstrap_reps: replicates of the iid bootstrap, 0 for the plug-in sandwich
    :param bandwidth_eta: coverage constant of the Hall-Sheather bandwidth
    :param rng_seed: master seed of the bootstrap
    """
    __slots__ = ()

    def __new__(cls, density=DensityMethod.NID, truncvar=TruncVarMethod.SCL_SP,
                bootstrap_reps=0, bandwidth_eta=0.05, rng_seed=0):
        if int(bootstrap_reps) < 0:
            raise ValueError("bootstrap_reps must be >= 0")
        if not 0.0 < float(bandwidth_eta) < 1.0:
            raise ValueError("bandwidth_eta must lie in (0, 1)")
        return super().__new__(cls, DensityMethod(density), TruncVarMethod(truncvar),
                               int(bootstrap_reps), float(bandwidth_eta), int(rng_seed))

    @property
    def label(self):
        if self.bootstrap_reps:
            return 'boot'
        return '%s/%s' % (self.density.value, self.truncvar.value)


CovarianceEstimate = namedtuple('CovarianceEstimate', 'matrix method density_values truncvar_values')

SandwichMoments = namedtuple('SandwichMoments', 'lambda11 lambda22 c')


def hall_sheather_bandwidth(alpha, n, eta=0.05):
    """
    Hall-Sheather bandwidth on the probability scale,
    n^(-1/3) z_{1-eta/2}^(2/3) [1.5 phi(z_alpha)^2 / (2 z_alpha^2 + 1)]^(1/3),
    clipped so that alpha - h and alpha + h stay inside (0, 1).
    """
    alpha = ProbabilityLevel(alpha)
    if n < 2:
        raise ValueError("Bandwidth needs n >= 2, got %r" % (n,))
    z = stats.norm.ppf(alpha)
    h = n ** (-1.0 / 3) * stats.norm.ppf(1.0 - eta / 2.0) ** (2.0 / 3) \
        * (1.5 * stats.norm.pdf(z) ** 2 / (2.0 * z ** 2 + 1.0)) ** (1.0 / 3)
    limit = min(alpha, 1.0 - alpha) * (1.0 - 1e-6)
    if h > limit:
        logger.debug("Clipping bandwidth %.4g to %.4g at alpha=%.4g", h, limit, alpha)
        h = limit
    return float(h)


def _clip_bandwidth(alpha, h):
    return min(h, min(alpha, 1.0 - alpha) * (1.0 - 1e-6))


def density_iid(quantile_residuals, alpha, h):
    """
    f = 2h / (F_u^-1(alpha + h) - F_u^-1(alpha - h)) from the interpolated empirical
    quantile function of the residuals. A non-positive spacing widens h by half once.

    :raises: DegenerateSpacingError when the spacing stays non-positive
    """
    u = np.asarray(quantile_residuals, dtype=float)
    for attempt in range(2):
        lo, hi = np.quantile(u, [alpha - h, alpha + h])
        if hi - lo > 0.0:
            return float(2.0 * h / (hi - lo))
        h = _clip_bandwidth(alpha, 1.5 * h)
    raise DegenerateSpacingError("Residual quantiles around level %.4g coincide" % alpha)


def density_nid(sample, alpha, h, fitopts=None):
    """
    Per-row density f_i = max(0, 2h / (x_i'(beta(alpha + h) - beta(alpha - h)) - delta)).

    :return: length-n vector
    """
    from .fit import quantile_fit
    upper = quantile_fit(sample, alpha + h, fitopts)
    lower = quantile_fit(sample, alpha - h, fitopts)
    if not (upper.converged and lower.converged):
        logger.warning("Shifted quantile regressions for the nid density did not converge")
    spacing = sample.x @ (upper.coef - lower.coef) - NID_DELTA
    with np.errstate(divide='ignore'):
        f = np.where(spacing > 0.0, 2.0 * h / np.where(spacing > 0.0, spacing, 1.0), 0.0)
    crossed = int(np.sum(spacing <= 0.0))
    if crossed:
        logger.warning("%d of %d rows have crossing quantile fits, density set to 0",
                       crossed, sample.n)
    return f


def truncvar_ind(quantile_residuals):
    """Unbiased sample variance of the non-positive quantile residuals."""
    u = np.asarray(quantile_residuals, dtype=float)
    tail = u[u <= 0.0]
    if np.sum(u < 0.0) < 2:
        raise InsufficientTailError("Need at least 2 negative quantile residuals, got %d"
                                    % np.sum(u < 0.0))
    return float(np.var(tail, ddof=1))


def truncated_normal_variance(mu, sigma):
    """
    Var(Z | Z <= 0) for Z ~ N(mu, sigma^2): sigma^2 (1 - g l - l^2) with g = -mu/sigma,
    l = phi(g) / Phi(g) (evaluated on the log scale).
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gamma = -mu / sigma
    lam = np.exp(stats.norm.logpdf(gamma) - stats.norm.logcdf(gamma))
    return sigma ** 2 * (1.0 - gamma * lam - lam ** 2)


ScaleFit = namedtuple('ScaleFit', 'zeta phi converged')


def fit_location_scale(quantile_residuals, x, tolerance=1e-10):
    """
    Gaussian quasi-ML of u = X'zeta + X'phi * eps. Nelder-Mead on the average negative
    log-likelihood; vertices with some x_i'phi <= 0 get +inf.

    :raises: ConvergenceError, SingularMatrixError (no feasible start)
    """
    u = np.asarray(quantile_residuals, dtype=float)
    x = np.asarray(x, dtype=float)
    k = x.shape[1]
    zeta0 = np.linalg.lstsq(x, u, rcond=None)[0]
    phi0 = np.linalg.lstsq(x, np.abs(u - x @ zeta0), rcond=None)[0] * np.sqrt(np.pi / 2.0)
    if not np.all(x @ phi0 > 0.0):
        phi0 = np.zeros(k)
        phi0[0] = np.std(u)
        if not np.all(x @ phi0 > 0.0):
            raise SingularMatrixError("No feasible start for the scale model")

    def nll(params):
        scale = x @ params[k:]
        if np.any(scale <= 0.0):
            return np.inf
        return float(np.mean(np.log(scale) + 0.5 * ((u - x @ params[:k]) / scale) ** 2))

    res = minimize(nll, np.concatenate([zeta0, phi0]), method='Nelder-Mead',
                   options={'maxiter': 2000 * 2 * k, 'xatol': tolerance, 'fatol': tolerance})
    if not np.isfinite(res.fun):
        raise ConvergenceError("Scale model quasi-ML left the feasible region")
    if res.status != 0:
        raise ConvergenceError("Scale model quasi-ML did not converge: %s" % res.message)
    return ScaleFit(res.x[:k], res.x[k:], True)


def truncvar_scl_normal(quantile_residuals, x):
    """
    Per-row Var(u | u <= 0, x_i) under u = X'zeta + X'phi * eps with normal eps.

    :return: length-n vector
    """
    x = np.asarray(x, dtype=float)
    scale_fit = fit_location_scale(quantile_residuals, x)
    sigma = x @ scale_fit.phi
    if np.any(sigma <= 0.0):
        raise ConvergenceError("Non-positive fitted scale")
    return truncated_normal_variance(x @ scale_fit.zeta, sigma)


def kde_truncated_variance(std_residuals, truncation, scale=1.0, grid_size=4097):
    """
    Var(eps | eps <= t) * scale^2 where eps has the Gaussian-KDE density (Silverman
    bandwidth) of std_residuals. The moments are cumulative Simpson integrals on a grid
    starting 5 bandwidths below the smallest residual.

    :param truncation: scalar or vector of truncation points t
    :param scale: scalar or vector matching truncation
    :raises: DegenerateKdeError (no spread), QuadratureError (empty or non-finite tail)
    """
    eps = np.asarray(std_residuals, dtype=float)
    if np.ptp(eps) == 0.0:
        raise DegenerateKdeError("Standardized residuals are all equal")
    kde = stats.gaussian_kde(eps, bw_method='silverman')
    bw = float(np.sqrt(kde.covariance[0, 0]))
    t = np.atleast_1d(np.asarray(truncation, dtype=float))
    lo = eps.min() - 5.0 * bw
    hi = min(max(t.max(), lo + bw), eps.max() + 5.0 * bw)
    grid = np.linspace(lo, hi, grid_size)
    dens = kde(grid)
    mass = integrate.cumulative_simpson(dens, x=grid, initial=0.0)
    first = integrate.cumulative_simpson(grid * dens, x=grid, initial=0.0)
    second = integrate.cumulative_simpson(grid ** 2 * dens, x=grid, initial=0.0)
    p = np.interp(t, grid, mass)
    with np.errstate(divide='ignore', invalid='ignore'):
        m1 = np.interp(t, grid, first) / p
        m2 = np.interp(t, grid, second) / p
        var = m2 - m1 ** 2
    if np.any(p <= 0.0) or not np.all(np.isfinite(var)):
        raise QuadratureError("Truncated KDE moments not finite (tail mass %.3g)" % p.min())
    var = np.maximum(var, 0.0) * np.asarray(scale, dtype=float) ** 2
    return var if np.ndim(truncation) else float(var[0])


def truncvar_scl_sp(quantile_residuals, x):
    """
    Per-row Var(u | u <= 0, x_i) under u = X'zeta + X'phi * eps with eps density
    estimated by a Gaussian KDE of the standardized residuals.
    """
    u = np.asarray(quantile_residuals, dtype=float)
    x = np.asarray(x, dtype=float)
    scale_fit = fit_location_scale(u, x)
    mu, sigma = x @ scale_fit.zeta, x @ scale_fit.phi
    if np.any(sigma <= 0.0):
        raise ConvergenceError("Non-positive fitted scale")
    return kde_truncated_variance((u - mu) / sigma, -mu / sigma, sigma)


def plugin_moments(fam, alpha, x, q, e, density, truncvar):
    """
    Sample-average Lambda and C blocks at the fitted values q = X'theta_q, e = X'theta_e.

    :param density: f(X'theta_q), scalar or per row
    :param truncvar: Var(Y - X'theta_q | Y <= X'theta_q, X), scalar or per row
    :return: SandwichMoments(lambda11, lambda22, c) with c the full 2k x 2k matrix
    """
    n = x.shape[0]
    w1 = alpha * fam.g1p(q) + fam.g2(e)
    g2p = fam.g2p(e)
    gap = q - e
    odds = (1.0 - alpha) / alpha
    density = np.broadcast_to(np.asarray(density, dtype=float), (n,))
    truncvar = np.broadcast_to(np.asarray(truncvar, dtype=float), (n,))

    def outer(weights):
        return (x * weights[:, None]).T @ x / n

    lambda11 = outer(density * w1) / alpha
    lambda22 = outer(g2p)
    c11 = odds * outer(w1 ** 2)
    c12 = odds * outer(gap * w1 * g2p)
    c22 = outer(g2p ** 2 * (truncvar / alpha + odds * gap ** 2))
    return SandwichMoments(lambda11, lambda22, np.block([[c11, c12], [c12.T, c22]]))


def _inverse(block, name):
    try:
        if not np.isfinite(np.linalg.cond(block)) or np.linalg.cond(block) > 1e14:
            raise np.linalg.LinAlgError
        return np.linalg.inv(block)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("%s is singular" % name)


def sandwich_from_moments(moments, quantile_only=False):
    """
    Lambda^-1 C Lambda^-1 for the block-diagonal Lambda, symmetrized.

    With quantile_only (G2 == 0, where Lambda22 vanishes) only the quantile block
    Lambda11^-1 C11 Lambda11^-1 is computed; the ES rows and columns are NaN.
    """
    k = moments.lambda11.shape[0]
    inv11 = _inverse(moments.lambda11, 'Lambda11')
    if quantile_only:
        cov = np.full_like(moments.c, np.nan)
        block = inv11 @ moments.c[:k, :k] @ inv11
        cov[:k, :k] = (block + block.T) / 2.0
        return cov
    inv = np.zeros_like(moments.c)
    inv[:k, :k] = inv11
    inv[k:, k:] = _inverse(moments.lambda22, 'Lambda22')
    cov = inv @ moments.c @ inv
    return (cov + cov.T) / 2.0


def sandwich(fit, sample, fam, alpha, covopts=None):
    """
    Plug-in estimate of Cov(theta_hat) = Lambda^-1 C Lambda^-1 / n. Evaluated on the
    sample and parameters of the fit's working (translated) scale.

    :param fit: FitResult of m_fit or z_fit
    :return: CovarianceEstimate
    """
    alpha = ProbabilityLevel(alpha)
    covopts = covopts or CovOptions()
    offset = fit.translation_offset
    work = sample.translated(offset) if offset else sample
    theta = fit.theta.shift_intercepts(-offset) if offset else fit.theta
    q, e = theta.fitted(work.x)
    fam.check_domain(e)
    u = work.y - q

    h = hall_sheather_bandwidth(alpha, work.n, covopts.bandwidth_eta)
    if covopts.density is DensityMethod.IID:
        density = density_iid(u, alpha, h)
    else:
        density = density_nid(work, alpha, h)

    if covopts.truncvar is TruncVarMethod.IND:
        truncvar = truncvar_ind(u)
    elif covopts.truncvar is TruncVarMethod.SCL_N:
        truncvar = truncvar_scl_normal(u, work.x)
    else:
        truncvar = truncvar_scl_sp(u, work.x)

    moments = plugin_moments(fam, alpha, work.x, q, e, density, truncvar)
    matrix = sandwich_from_moments(moments, fam.g2_kind is G2Kind.ZERO) / work.n
    logger.debug("Sandwich %s: diagonal %s", covopts.label, np.diag(matrix))
    return CovarianceEstimate(matrix, covopts, density, truncvar)


def _bootstrap_replicate(args):
    sample, fam, alpha, fitopts, seed_seq = args
    from .fit import m_fit
    rng = np.random.default_rng(seed_seq)
    index = rng.integers(0, sample.n, sample.n)
    try:
        return m_fit(fam, alpha, sample.rows(index), fitopts).theta.stack()
    except (EsregError, ValueError) as exc:
        logger.debug("Bootstrap replicate failed: %s", exc)
        return None


def bootstrap_covariance(sample, fam, alpha, fitopts=None, B=500, seed=0, workers=1):
    """
    Nonparametric iid bootstrap: resample rows with replacement B times, refit m_fit,
    return the empirical covariance of the estimates. Replicate b draws from the b-th
    child of SeedSequence(seed), so the result does not depend on workers.

    :raises: BootstrapError when more than 10% of the replicates fail
    """
    if B < 2:
        raise ValueError("Bootstrap needs B >= 2, got %r" % (B,))
    alpha = ProbabilityLevel(alpha)
    children = np.random.SeedSequence(seed).spawn(B)
    estimates = _pool.pool_map(_bootstrap_replicate,
                               [(sample, fam, alpha, fitopts, child) for child in children],
                               workers)
    ok = [est for est in estimates if est is not None]
    failures = B - len(ok)
    if failures > 0.1 * B or len(ok) < 2:
        raise BootstrapError("%d of %d bootstrap replicates failed" % (failures, B), failures)
    if failures:
        logger.warning("%d of %d bootstrap replicates failed and were dropped", failures, B)
    matrix = np.atleast_2d(np.cov(np.vstack(ok), rowvar=False, ddof=1))
    return CovarianceEstimate(matrix, CovOptions(bootstrap_reps=B, rng_seed=seed), None, None)


def estimate(fit, sample, fam, alpha, covopts=None, fitopts=None, workers=1):
    """Bootstrap when covopts.bootstrap_reps > 0, plug-in sandwich otherwise."""
    covopts = covopts or CovOptions()
    if covopts.bootstrap_reps:
        return bootstrap_covariance(sample, fam, alpha, fitopts, covopts.bootstrap_reps,
                                    covopts.rng_seed, workers)
    return sandwich(fit, sample, fam, alpha, covopts)


class StudentT5(object):
    """Student-t with 5 degrees of freedom rescaled to unit variance."""
    df = 5.0
    factor = np.sqrt(5.0 / 3.0)


def _distribution(dist, scale):
    if dist in ('normal', 'Normal'):
        return stats.norm(scale=scale)
    if dist in ('t5', 'StudentT5') or dist is StudentT5:
        return stats.t(StudentT5.df, scale=scale / StudentT5.factor)
    raise ValueError("Unknown distribution %r" % (dist,))


TailVarianceCheck = namedtuple('TailVarianceCheck', 'lhs rhs')


def tail_variance_identity(dist, alpha, scale=1.0):
    """
    Two evaluations of the ES-block variance of an intercept-only fit:
      lhs = (1/alpha^2) double integral over (-inf, q]^2 of F(min(x, y)) - F(x)F(y)
      rhs = Var(Y | Y <= q) / alpha + ((1 - alpha)/alpha) (q - ES)^2

    The lower integration limit is the 1e-12 quantile of the law.

    :param dist: 'normal' or 't5' (standardized Student-t with 5 degrees of freedom)
    :raises: QuadratureError
    """
    alpha = ProbabilityLevel(alpha)
    law = _distribution(dist, scale)
    q = float(law.ppf(alpha))
    lower = float(law.ppf(1e-12))

    # symmetric integrand: twice the integral over y <= x
    def integrand(y, x):
        return law.cdf(y) * (1.0 - law.cdf(x))

    value, err = integrate.dblquad(integrand, lower, q, lower, lambda x: x,
                                   epsabs=1e-11, epsrel=1e-10)
    if not np.isfinite(value):
        raise QuadratureError("Double integral did not converge (error %.3g)" % err)
    lhs = 2.0 * value / alpha ** 2

    es = law.expect(lambda v: v, ub=q, conditional=True)
    second = law.expect(lambda v: v ** 2, ub=q, conditional=True)
    tail_var = second - es ** 2
    rhs = tail_var / alpha + (1.0 - alpha) / alpha * (q - es) ** 2
    if not (np.isfinite(lhs) and np.isfinite(rhs)):
        raise QuadratureError("Non-finite identity sides")
    return TailVarianceCheck(float(lhs), float(rhs))
