# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

from unittest import TestCase

import numpy as np
from scipy.stats import norm

from pyesreg import esreg
from pyesreg.errors import DivergenceError, DomainError
from pyesreg.fit import (Estimator, FitOptions, es_matching_level, fit, m_fit, perturb,
                         quantile_fit, starting_values, z_fit)
from pyesreg.simulate import DgpKind, DgpSpec, dgp_sample, true_params
from pyesreg.speclib import (FAMILIES, G1Kind, G2Kind, JointParams, RegressionSample,
                             SpecificationFamily, average_loss)

TEN_POINTS = np.arange(-4.0, 6.0)
NEG_LOG = SpecificationFamily(G2Kind.NEG_LOG)


class TestQuantileFit(TestCase):

    def test_empirical_quantile(self):
        """
            Checks the intercept-only fit against the left-continuous empirical quantile
        """
        sample = RegressionSample(TEN_POINTS)
        self.assertAlmostEqual(quantile_fit(sample, 0.2).coef[0], -3.0, places=8)
        self.assertAlmostEqual(quantile_fit(sample, 0.55).coef[0], 1.0, places=8)

    def test_es_matching_level(self):
        """
            Checks that the matched level's normal quantile is the normal ES
        """
        for alpha in (0.01, 0.025, 0.1):
            es = -norm.pdf(norm.ppf(alpha)) / alpha
            self.assertAlmostEqual(norm.ppf(es_matching_level(alpha)), es, places=10)
            self.assertLess(es_matching_level(alpha), alpha)

    def test_starting_values(self):
        """
            Checks theta_e starts below theta_q on the ten-point sample
        """
        theta = starting_values(RegressionSample(TEN_POINTS), 0.2)
        self.assertAlmostEqual(theta.theta_q[0], -3.0, places=8)
        self.assertLessEqual(theta.theta_e[0], theta.theta_q[0])


class TestOptions(TestCase):

    def test_validation(self):
        """
            Checks option validation and defaults
        """
        self.assertRaises(ValueError, FitOptions, max_ils_stale=0)
        self.assertRaises(ValueError, FitOptions, nm_tolerance=0.0)
        self.assertRaises(ValueError, FitOptions, estimator='x')
        opts = FitOptions()
        self.assertEqual(opts.max_iter_for(4), 2000)
        self.assertTrue(opts.translate_for(NEG_LOG))
        self.assertFalse(opts.translate_for(SpecificationFamily('exp')))
        self.assertFalse(FitOptions(translate=False).translate_for(NEG_LOG))

    def test_perturb(self):
        """
            Checks that perturbation is seeded and zero scales keep theta
        """
        theta = JointParams([1.0, 2.0], [3.0, 4.0])
        a = perturb(theta, np.ones(4), np.random.default_rng(1))
        b = perturb(theta, np.ones(4), np.random.default_rng(1))
        self.assertEqual(a, b)
        self.assertNotEqual(a, theta)
        self.assertEqual(perturb(theta, np.zeros(4), np.random.default_rng(1)), theta)

    def test_perturb_scales(self):
        """
            Checks the perturbation noise has zero mean and the requested spread
        """
        theta = JointParams([1.0, -2.0], [0.5, 3.0])
        scales = np.array([0.5, 1.0, 2.0, 3.0])
        rng = np.random.default_rng(7)
        draws = np.vstack([perturb(theta, scales, rng).stack() for _ in range(100000)])
        noise = draws - theta.stack()
        np.testing.assert_allclose(noise.std(axis=0, ddof=1), scales, rtol=0.02)
        np.testing.assert_allclose(noise.mean(axis=0), 0.0,
                                   atol=5.0 * scales.max() / np.sqrt(1e5))


class TestMFit(TestCase):
    sample = RegressionSample(TEN_POINTS)

    def test_ten_points(self):
        """
            Checks every family recovers the empirical quantile and tail mean
        """
        for fam in FAMILIES:
            result = m_fit(fam, 0.2, self.sample)
            self.assertAlmostEqual(result.theta.theta_q[0], -3.0, delta=1e-2, msg=fam)
            self.assertAlmostEqual(result.theta.theta_e[0], -3.5, delta=1e-2, msg=fam)
            self.assertEqual(result.estimator, Estimator.M)

    def test_translation(self):
        """
            Checks negative-domain fits translate by max(Y) and report it
        """
        result = m_fit(NEG_LOG, 0.2, self.sample)
        self.assertEqual(result.translation_offset, 5.0)
        untranslated = m_fit(SpecificationFamily('exp'), 0.2, self.sample)
        self.assertEqual(untranslated.translation_offset, 0.0)

    def test_translation_coherence(self):
        """
            Checks that shifting the responses shifts both intercepts by the same amount
        """
        raw = dgp_sample(DgpSpec(DgpKind.DGP1, 0.1, 200), np.random.default_rng(4))
        y = np.round(raw.y * 64.0) / 64.0
        base = m_fit(NEG_LOG, 0.1, RegressionSample(y, raw.x))
        shifted = m_fit(NEG_LOG, 0.1, RegressionSample(y + 2.0, raw.x))
        np.testing.assert_allclose(shifted.theta.stack(),
                                   base.theta.shift_intercepts(2.0).stack(), atol=1e-9)

    def test_constant_response(self):
        """
            Checks the degenerate fixed point of a constant sample
        """
        sample = RegressionSample(np.full(20, -2.0))
        result = m_fit(NEG_LOG, 0.1, sample)
        self.assertEqual(result.theta, JointParams([-2.0], [-2.0]))
        self.assertTrue(result.converged)
        self.assertEqual(result.ils_iterations, 0)

        positive = m_fit(NEG_LOG, 0.1, RegressionSample(np.full(20, 1.0)))
        self.assertEqual(positive.theta, JointParams([1.0], [1.0]))
        self.assertTrue(np.isnan(positive.psi_norm_at_solution))

    def test_ils_path(self):
        """
            Checks the recorded best losses decrease and end at the reported loss
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP2, 0.025, 300), np.random.default_rng(2))
        result = m_fit(NEG_LOG, 0.025, sample, FitOptions(max_ils_stale=3))
        self.assertTrue(np.all(np.diff(result.loss_path) < 0.0))
        self.assertGreaterEqual(result.ils_iterations, 3)
        self.assertAlmostEqual(average_loss(NEG_LOG, 0.025,
                                            sample.translated(result.translation_offset),
                                            result.theta.shift_intercepts(
                                                -result.translation_offset)),
                               result.avg_loss, places=8)

    def test_loss_scale(self):
        """
            Checks the reported loss is the average over the translated working sample
        """
        sample = RegressionSample(TEN_POINTS)
        result = m_fit(NEG_LOG, 0.2, sample)
        self.assertEqual(result.translation_offset, 5.0)
        working = average_loss(NEG_LOG, 0.2, sample.translated(5.0),
                               result.theta.shift_intercepts(-5.0))
        self.assertAlmostEqual(result.avg_loss, working, places=10)
        untranslated = m_fit(NEG_LOG, 0.2, sample.translated(5.0), FitOptions(translate=False))
        self.assertEqual(untranslated.translation_offset, 0.0)
        self.assertAlmostEqual(untranslated.avg_loss, result.avg_loss, places=6)

    def test_deterministic(self):
        """
            Checks that a fixed seed gives identical estimates
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP1, 0.025, 200), np.random.default_rng(6))
        a = m_fit(NEG_LOG, 0.025, sample, FitOptions(rng_seed=3))
        b = m_fit(NEG_LOG, 0.025, sample, FitOptions(rng_seed=3))
        self.assertEqual(a.theta, b.theta)

    def test_quantile_regression_nesting(self):
        """
            Checks that G1(z) = z with G2 = 0 reproduces linear quantile regression
        """
        # n alpha not an integer
        sample = dgp_sample(DgpSpec(DgpKind.DGP1, 0.025, 201), np.random.default_rng(7))
        pinball = SpecificationFamily(G2Kind.ZERO, G1Kind.LINEAR)
        result = m_fit(pinball, 0.025, sample)
        np.testing.assert_allclose(result.theta.theta_q, quantile_fit(sample, 0.025).coef,
                                   atol=1e-4)

    def test_true_parameters(self):
        """
            Checks a large DGP1 fit lands near the true parameters
        """
        spec = DgpSpec(DgpKind.DGP1, 0.025, 5000)
        result = m_fit(SpecificationFamily('neg-sqrt'), 0.025,
                       dgp_sample(spec, np.random.default_rng(12)))
        theta0 = true_params(spec)
        np.testing.assert_allclose(result.theta.theta_q, theta0.theta_q, atol=0.25)
        np.testing.assert_allclose(result.theta.theta_e, theta0.theta_e, atol=0.35)

    def test_domain_without_intercept(self):
        """
            Checks that infeasible starts without an intercept to shift are refused
        """
        x = np.column_stack([np.linspace(1.0, 2.0, 30)])
        y = np.linspace(1.0, 3.0, 30)
        sample = RegressionSample(y, x, intercept=False)
        self.assertRaises(DomainError, m_fit, NEG_LOG, 0.1, sample)


class TestZFit(TestCase):
    sample = RegressionSample(TEN_POINTS)

    def test_ten_points(self):
        """
            Checks the Z-estimator on the ten-point sample zeroes the averaged psi
        """
        result = z_fit(NEG_LOG, 0.2, self.sample)
        self.assertEqual(result.estimator, Estimator.Z)
        self.assertLess(result.psi_norm_at_solution, 1e-3)

    def test_interior_root(self):
        """
            Checks the Z-estimator finds the root of an intercept-only continuous sample
        """
        y = np.random.default_rng(3).normal(size=40)
        result = z_fit(NEG_LOG, 0.1, RegressionSample(y))
        self.assertLess(result.psi_norm_at_solution, 1e-6)
        tail = np.sort(y)[:4]
        self.assertAlmostEqual(result.theta.theta_e[0], tail.mean(), delta=1e-4)
        self.assertGreaterEqual(result.theta.theta_q[0], tail[-1] - 1e-6)
        self.assertLess(result.theta.theta_q[0], np.sort(y)[4])

    def test_divergence(self):
        """
            Checks the divergence bound aborts the Z-estimator
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP1, 0.025, 200), np.random.default_rng(1))
        opts = FitOptions(estimator='z', divergence_bound=1e-6)
        self.assertRaises(DivergenceError, z_fit, SpecificationFamily('exp'), 0.025, sample,
                          opts)
        self.assertRaises(DivergenceError, fit, SpecificationFamily('exp'), 0.025, sample, opts)

    def test_divergence_default_bound(self):
        """
            Checks the Z-estimator diverges on heteroskedastic data under the default bound
        """
        exp = SpecificationFamily('exp')
        diverged = 0
        for seed in range(10):
            sample = dgp_sample(DgpSpec(DgpKind.DGP2, 0.025, 250), np.random.default_rng(seed))
            try:
                z_fit(exp, 0.025, sample)
            except DivergenceError:
                diverged += 1
        self.assertGreater(diverged, 0)


class TestFacade(TestCase):

    def test_esreg(self):
        """
            Checks the model object on the ten-point sample
        """
        model = esreg(TEN_POINTS, alpha=0.2, family='exp')
        self.assertAlmostEqual(model.coefficients.theta_q[0], -3.0, delta=1e-2)
        var, es = model.predict(np.zeros((3, 0)))
        np.testing.assert_allclose(var, -3.0, atol=1e-2)
        np.testing.assert_allclose(es, -3.5, atol=1e-2)
        self.assertIn('exp', repr(model))

    def test_regressors(self):
        """
            Checks predictions and pseudo-R2 with one regressor
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP2, 0.025, 500), np.random.default_rng(5))
        model = esreg(sample.y, sample.x[:, 1], alpha=0.025, family='exp')
        self.assertEqual(model.coefficients.k, 2)
        var, es = model.predict([[0.5], [1.5]])
        self.assertEqual(var.shape, (2,))
        r2 = model.pseudo_r2()
        self.assertTrue(np.isfinite(r2))
        self.assertLess(r2, 1.0)
        self.assertRaises(DomainError, esreg(sample.y, sample.x[:, 1], alpha=0.025).pseudo_r2)
