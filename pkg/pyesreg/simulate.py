# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.simulate
Location-scale data generating processes Y = X'gamma + (X'eta) v, their true joint
parameters and oracle quantities, and the Monte-Carlo studies built on them:

  mc_mse_study()                -- MSE of m_fit per (dgp, family, n)
  true_asymptotic_covariance()  -- Lambda^-1 C Lambda^-1 at theta_0 by MC integration
  covariance_benchmark()        -- plug-in / bootstrap covariance vs. empirical covariance
  forecast_model_series()       -- synthetic (return, RV) series for the evaluate module

All randomness flows through numpy Generators seeded from SeedSequence; replication r
of cell (dgp, n) always sees the same sample whatever the family or worker count.
"""

import logging
from collections import namedtuple
from enum import Enum

import numpy as np
import pandas as pd
from scipy import stats
from scipy.signal import lfilter

from . import _pool
from .covariance import (CovOptions, bootstrap_covariance, plugin_moments, sandwich,
                         sandwich_from_moments, truncated_normal_variance)
from .errors import EsregError, SingularMatrixError
from .fit import m_fit
from .speclib import G2Kind, JointParams, ProbabilityLevel, RegressionSample

logger = logging.getLogger(__name__)

T5_DF = 5.0
T5_FACTOR = np.sqrt(5.0 / 3.0)
# Gaussian copula parameter giving uniforms with Pearson correlation 0.5
COPULA_RHO = 2.0 * np.sin(np.pi / 12.0)


class DgpKind(Enum):
    DGP1 = 'dgp1'
    DGP2 = 'dgp2'
    DGP3 = 'dgp3'
    IID_NORMAL = 'iid-normal'

    @classmethod
    def from_name(cls, name):
        name = str(name).lower()
        return cls('dgp' + name if name in ('1', '2', '3') else name)


_GAMMA = {DgpKind.DGP1: (0.0, -1.0), DgpKind.DGP2: (0.0, -1.0),
          DgpKind.DGP3: (0.0, 1.0, -1.0), DgpKind.IID_NORMAL: (0.0,)}
_ETA = {DgpKind.DGP1: (1.0, 0.0), DgpKind.DGP2: (1.0, 0.5),
        DgpKind.DGP3: (1.0, 1.0, 1.0), DgpKind.IID_NORMAL: (1.0,)}


class DgpSpec(namedtuple('DgpSpec', 'kind alpha n')):
    """
    :param kind: DgpKind
    :param alpha: probability level
    :param n: sample size, at least 50
    """
    __slots__ = ()

    def __new__(cls, kind, alpha=0.025, n=1000):
        if int(n) < 50:
            raise ValueError("DGP sample size must be >= 50, got %r" % (n,))
        return super().__new__(cls, DgpKind(kind), ProbabilityLevel(alpha), int(n))

    @property
    def gamma(self):
        return np.array(_GAMMA[self.kind])

    @property
    def eta(self):
        return np.array(_ETA[self.kind])

    @property
    def k(self):
        return len(_GAMMA[self.kind])

    @property
    def heavy_tailed(self):
        return self.kind is DgpKind.DGP3


def draw_design(kind, n, rng):
    """n x k design with the constant in the first column."""
    if kind is DgpKind.IID_NORMAL:
        return np.ones((n, 1))
    if kind is DgpKind.DGP3:
        z1 = rng.standard_normal(n)
        z2 = COPULA_RHO * z1 + np.sqrt(1.0 - COPULA_RHO ** 2) * rng.standard_normal(n)
        return np.column_stack([np.ones(n), stats.norm.cdf(z1), stats.norm.cdf(z2)])
    # chi-square(1) as a squared standard normal
    return np.column_stack([np.ones(n), rng.standard_normal(n) ** 2])


def draw_innovation(spec, n, rng):
    if spec.heavy_tailed:
        return rng.standard_t(T5_DF, n) / T5_FACTOR
    return rng.standard_normal(n)


def dgp_sample(spec, rng):
    """One RegressionSample of Y = X'gamma + (X'eta) v."""
    x = draw_design(spec.kind, spec.n, rng)
    v = draw_innovation(spec, spec.n, rng)
    return RegressionSample(x @ spec.gamma + (x @ spec.eta) * v, x)


InnovationLaw = namedtuple('InnovationLaw', 'quantile es density truncvar')


def innovation_law(spec):
    """
    Quantile, ES, density at the quantile and Var(v | v <= quantile) of the innovation
    v: standard normal, or Student-t5 rescaled to unit variance.
    """
    alpha = spec.alpha
    if not spec.heavy_tailed:
        z = stats.norm.ppf(alpha)
        return InnovationLaw(z, -stats.norm.pdf(z) / alpha, stats.norm.pdf(z),
                             float(truncated_normal_variance(-z, 1.0)))
    law = stats.t(T5_DF)
    t = law.ppf(alpha)
    es = -(T5_DF + t ** 2) / (T5_DF - 1.0) * law.pdf(t) / alpha
    second = law.expect(lambda v: v ** 2, ub=t, conditional=True)
    return InnovationLaw(t / T5_FACTOR, es / T5_FACTOR, law.pdf(t) * T5_FACTOR,
                         (second - es ** 2) / T5_FACTOR ** 2)


def true_params(spec):
    """theta_q = gamma + z_alpha eta, theta_e = gamma + xi_alpha eta."""
    law = innovation_law(spec)
    return JointParams(spec.gamma + law.quantile * spec.eta, spec.gamma + law.es * spec.eta)


def oracle_es_fit(sample, theta_q_true):
    """
    Least squares of Y on X over the rows with Y <= X'theta_q (true quantile known).

    :raises: SingularMatrixError with fewer than k linearly independent tail rows
    """
    tail = sample.y <= sample.x @ np.asarray(theta_q_true, dtype=float)
    xt = sample.x[tail]
    if xt.shape[0] < sample.k or np.linalg.matrix_rank(xt) < sample.k:
        raise SingularMatrixError("Truncated Gram matrix is singular (%d tail rows)"
                                  % xt.shape[0])
    return np.linalg.solve(xt.T @ xt, xt.T @ sample.y[tail])


class Block(Enum):
    Q = 'Q'
    ES = 'ES'
    FULL = 'Full'


def frobenius_lower(matrix, block=Block.FULL, normalize=True):
    """
    Frobenius norm of the on-and-below-diagonal entries of a block of a 2k x 2k matrix.

    With normalize, the norm is divided by the square root of m (m + 1) / 2, the number of
    lower-triangular entries of the m x m block.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("Need a square matrix, got shape %s" % (matrix.shape,))
    block = Block(block)
    k = matrix.shape[0] // 2
    if block is Block.Q:
        matrix = matrix[:k, :k]
    elif block is Block.ES:
        matrix = matrix[k:, k:]
    norm = float(np.sqrt(np.sum(np.tril(matrix) ** 2)))
    if normalize:
        m = matrix.shape[0]
        norm /= np.sqrt(m * (m + 1) / 2.0)
    return norm


def _mc_chunks(spec, mc_n, seed, chunk):
    rng = np.random.default_rng(seed)
    done = 0
    while done < mc_n:
        size = min(chunk, mc_n - done)
        yield draw_design(spec.kind, size, rng)
        done += size


def true_asymptotic_covariance(spec, family, mc_n=10 ** 7, seed=0, chunk=10 ** 6):
    """
    Lambda^-1 C Lambda^-1 at theta_0, the expectations over X averaged over mc_n design
    draws with the true conditional density f_v(z_alpha) / X'eta and truncated variance
    (X'eta)^2 Var(v | v <= z_alpha).

    :raises: SingularMatrixError
    """
    if mc_n < 10 ** 6:
        raise ValueError("Monte-Carlo integration needs mc_n >= 1e6, got %r" % (mc_n,))
    law = innovation_law(spec)
    theta = true_params(spec)
    lambda11 = lambda22 = c = 0.0
    for x in _mc_chunks(spec, int(mc_n), seed, chunk):
        q, e = theta.fitted(x)
        scale = x @ spec.eta
        family.check_domain(e)
        part = plugin_moments(family, spec.alpha, x, q, e, law.density / scale,
                              scale ** 2 * law.truncvar)
        weight = x.shape[0] / float(mc_n)
        lambda11 = lambda11 + weight * part.lambda11
        lambda22 = lambda22 + weight * part.lambda22
        c = c + weight * part.c
    return sandwich_from_moments(part._replace(lambda11=lambda11, lambda22=lambda22, c=c),
                                 family.g2_kind is G2Kind.ZERO)


def quantile_regression_covariance(spec, mc_n=10 ** 7, seed=0, chunk=10 ** 6):
    """alpha (1 - alpha) D1^-1 D0 D1^-1 of plain quantile regression at the true density."""
    law = innovation_law(spec)
    d0 = d1 = 0.0
    for x in _mc_chunks(spec, int(mc_n), seed, chunk):
        f = law.density / (x @ spec.eta)
        d0 = d0 + x.T @ x / mc_n
        d1 = d1 + (x * f[:, None]).T @ x / mc_n
    d1_inv = np.linalg.inv(d1)
    return spec.alpha * (1.0 - spec.alpha) * d1_inv @ d0 @ d1_inv


def covariance_table(spec, families, mc_n=10 ** 7, seed=0):
    """
    Lower-triangular Frobenius norms (Q, ES, Full) of the true asymptotic covariance per
    family, plus a quantile-regression row with the Q norm only.

    :return: pandas.DataFrame indexed by family name
    """
    rows = []
    for fam in families:
        cov = true_asymptotic_covariance(spec, fam, mc_n, seed)
        rows.append({'family': fam.name, 'Q': frobenius_lower(cov, Block.Q),
                     'ES': frobenius_lower(cov, Block.ES), 'Full': frobenius_lower(cov)})
    qr = quantile_regression_covariance(spec, mc_n, seed)
    rows.append({'family': 'quantile-regression', 'Q': frobenius_lower(qr),
                 'ES': np.nan, 'Full': np.nan})
    return pd.DataFrame(rows).set_index('family')


McCell = namedtuple('McCell', 'dgp family n estimator metric value failures reps')


class McReport(object):
    """
    Cells of a Monte-Carlo study; one McCell per (dgp, family, n, estimator).

    :param study: 'mse' or 'covbench'
    :param reps: replications per cell
    :param seed: master seed
    """

    def __init__(self, study, cells, reps, seed):
        self.study = study
        self.cells = list(cells)
        self.reps = reps
        self.seed = seed

    def value(self, dgp, family, n, estimator='m'):
        for cell in self.cells:
            if (cell.dgp, cell.family, cell.n, cell.estimator) == \
                    (DgpKind(dgp).value, family, n, estimator):
                return cell.value
        raise KeyError((dgp, family, n, estimator))

    def to_frame(self):
        return pd.DataFrame(self.cells, columns=McCell._fields)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')

    def to_dict(self):
        return {'study': self.study, 'reps': self.reps, 'seed': self.seed,
                'cells': [cell._asdict() for cell in self.cells]}

    def __repr__(self):
        return "McReport(study=%r, cells=%d, reps=%d, seed=%r)" % (self.study, len(self.cells),
                                                                  self.reps, self.seed)


def _replicate_seed(seed, spec, r):
    return np.random.SeedSequence(seed, spawn_key=(list(DgpKind).index(spec.kind), spec.n, r))


def _mse_replicate(args):
    spec, families, fitopts, seed_seq, theta0 = args
    sample = dgp_sample(spec, np.random.default_rng(seed_seq))
    errors = []
    for fam in families:
        try:
            errors.append((m_fit(fam, spec.alpha, sample, fitopts).theta.stack() - theta0) ** 2)
        except (EsregError, ValueError) as exc:
            logger.debug("Replication failed for %r: %s", fam, exc)
            errors.append(None)
    return errors


def _estimate_replicate(args):
    spec, fam, fitopts, seed_seq = args
    sample = dgp_sample(spec, np.random.default_rng(seed_seq))
    try:
        return m_fit(fam, spec.alpha, sample, fitopts).theta.stack()
    except (EsregError, ValueError) as exc:
        logger.debug("Replication failed for %r: %s", fam, exc)
        return None


def replicate_estimates(spec, fam, reps, seed=0, fitopts=None, workers=1):
    """
    Stacked m_fit estimates on reps fresh samples of spec, seeded like mc_mse_study.

    :return: (reps - failures) x 2k array
    """
    if reps < 2:
        raise ValueError("Need reps >= 2, got %r" % (reps,))
    tasks = [(spec, fam, fitopts, _replicate_seed(seed, spec, r)) for r in range(reps)]
    ok = [est for est in _pool.pool_map(_estimate_replicate, tasks, workers) if est is not None]
    if len(ok) < reps:
        logger.warning("%d of %d replications failed and were dropped", reps - len(ok), reps)
    return np.vstack(ok) if ok else np.empty((0, 2 * spec.k))


def mc_mse_study(dgps, families, ns, reps, seed=0, alpha=0.025, fitopts=None, workers=1):
    """
    Sum over the 2k parameters of the replication-mean squared error of m_fit, per
    (dgp, family, n). All families are fitted on the same samples.

    :return: McReport with metric 'mse'; failed fits are excluded and counted
    """
    if reps < 2:
        raise ValueError("Need reps >= 2, got %r" % (reps,))
    cells = []
    for kind in dgps:
        for n in ns:
            spec = DgpSpec(kind, alpha, n)
            theta0 = true_params(spec).stack()
            tasks = [(spec, tuple(families), fitopts, _replicate_seed(seed, spec, r), theta0)
                     for r in range(reps)]
            results = _pool.pool_map(_mse_replicate, tasks, workers)
            for j, fam in enumerate(families):
                ok = [res[j] for res in results if res[j] is not None]
                mse = float(np.sum(np.mean(ok, axis=0))) if ok else np.nan
                cells.append(McCell(spec.kind.value, fam.name, n, 'm', 'mse', mse,
                                    reps - len(ok), reps))
                logger.info("%s n=%d %s: MSE %.6g (%d failures)", spec.kind.value, n,
                            fam.name, mse, reps - len(ok))
    return McReport('mse', cells, reps, seed)


BENCHMARK_ESTIMATORS = (('iid/ind', CovOptions('iid', 'ind')),
                        ('nid/scl-N', CovOptions('nid', 'scl-N')),
                        ('nid/scl-sp', CovOptions('nid', 'scl-sp')),
                        ('boot', None))


def _benchmark_replicate(args):
    spec, fam, fitopts, bootstrap_reps, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    sample = dgp_sample(spec, rng)
    try:
        fit = m_fit(fam, spec.alpha, sample, fitopts)
    except (EsregError, ValueError) as exc:
        logger.debug("Benchmark fit failed: %s", exc)
        return None, {}
    estimates = {}
    for label, covopts in BENCHMARK_ESTIMATORS:
        try:
            if covopts is None:
                boot_seed = int(rng.integers(2 ** 32))
                cov = bootstrap_covariance(sample, fam, spec.alpha, fitopts, bootstrap_reps,
                                           boot_seed)
            else:
                cov = sandwich(fit, sample, fam, spec.alpha, covopts)
            estimates[label] = cov.matrix
        except (EsregError, ValueError) as exc:
            logger.debug("%s covariance failed: %s", label, exc)
    return fit.theta.stack(), estimates


def covariance_benchmark(dgps, families, ns, reps, seed=0, alpha=0.025, fitopts=None,
                         bootstrap_reps=100, workers=1):
    """
    Average over replications of frobenius_lower(n (estimated - empirical covariance))
    for each covariance estimator, the empirical covariance being that of theta_hat
    across the replications of the cell.
    """
    if reps < 50:
        raise ValueError("Covariance benchmark needs reps >= 50, got %r" % (reps,))
    cells = []
    for kind in dgps:
        for n in ns:
            spec = DgpSpec(kind, alpha, n)
            for fam in families:
                tasks = [(spec, fam, fitopts, bootstrap_reps, _replicate_seed(seed, spec, r))
                         for r in range(reps)]
                results = [res for res in _pool.pool_map(_benchmark_replicate, tasks, workers)
                           if res[0] is not None]
                empirical = np.cov(np.vstack([res[0] for res in results]), rowvar=False)
                for label, _ in BENCHMARK_ESTIMATORS:
                    errs = [frobenius_lower(n * (res[1][label] - empirical))
                            for res in results if label in res[1]]
                    value = float(np.mean(errs)) if errs else np.nan
                    cells.append(McCell(spec.kind.value, fam.name, n, label, 'frobenius_error',
                                        value, reps - len(errs), reps))
                    logger.info("%s n=%d %s %s: %.6g", spec.kind.value, n, fam.name, label, value)
    return McReport('covbench', cells, reps, seed)


SyntheticSeries = namedtuple('SyntheticSeries', 'series theta')


def forecast_model_series(n_days, alpha=0.025, gamma=(0.0, 0.0), eta=(0.0, 1.0), rv_mean=1.0,
                          rv_persistence=0.9, rv_vol=0.25, seed=0):
    """
    Daily returns r_t = (1, RV_{t-1})'gamma + (1, RV_{t-1})'eta v_t with standard normal v
    and log RV an AR(1) around log(rv_mean). The one-step VaR and ES are then linear in
    the lagged RV with coefficients theta.

    :return: SyntheticSeries(ReturnSeries, JointParams)
    """
    from .evaluate import ReturnSeries
    alpha = ProbabilityLevel(alpha)
    gamma, eta = np.asarray(gamma, dtype=float), np.asarray(eta, dtype=float)
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(n_days) * rv_vol
    shocks[0] /= np.sqrt(1.0 - rv_persistence ** 2)
    rv = rv_mean * np.exp(lfilter([1.0], [1.0, -rv_persistence], shocks))
    lagged = np.concatenate([rv[:1], rv[:-1]])
    x = np.column_stack([np.ones(n_days), lagged])
    scale = x @ eta
    if np.any(scale <= 0.0):
        raise ValueError("Return scale (1, RV)'eta must be positive")
    returns = x @ gamma + scale * rng.standard_normal(n_days)
    z = stats.norm.ppf(alpha)
    theta = JointParams(gamma + z * eta, gamma - stats.norm.pdf(z) / alpha * eta)
    dates = pd.bdate_range('2000-01-03', periods=n_days).strftime('%Y-%m-%d')
    return SyntheticSeries(ReturnSeries(list(dates), returns, rv), theta)
