# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

from unittest import TestCase
import json
import os
import shutil
import tempfile

import jsonschema
import numpy as np
import pandas as pd

from pyesreg import cli
from pyesreg.evaluate import ForecastTrack
from pyesreg.simulate import DgpKind, DgpSpec, dgp_sample

TEN_POINTS = np.arange(-4.0, 6.0)


class TestCli(TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def path(self, name):
        return os.path.join(self.tmp, name)

    def write(self, name, text):
        with open(self.path(name), 'w') as fs:
            fs.write(text)
        return self.path(name)

    def load(self, name):
        with open(self.path(name)) as fs:
            return json.load(fs)

    def validate(self, report):
        with open(cli.SCHEMA_FILE) as fs:
            schema = json.load(fs)
        jsonschema.validate(report, schema)
        self.assertTrue(set(schema['required']) <= set(report))

    def ten_point_csv(self):
        return self.write('ten.csv', 'y\n' + '\n'.join('%g' % y for y in TEN_POINTS) + '\n')

    def test_fit(self):
        """
            Checks the fit report of the ten-point sample
        """
        code = cli.main(['fit', self.ten_point_csv(), '--alpha', '0.2', '--family', 'exp',
                         '--cov-density', 'iid', '--cov-truncvar', 'ind', '-o', self.path('o')])
        self.assertIn(code, (cli.EXIT_OK, cli.EXIT_COV))
        report = self.load('o')
        self.validate(report)
        self.assertAlmostEqual(report['theta_q'][0], -3.0, delta=1e-2)
        self.assertAlmostEqual(report['theta_e'][0], -3.5, delta=1e-2)
        self.assertEqual(report['columns'], ['(intercept)'])
        self.assertEqual(report['metadata']['n'], 10)
        self.assertIsNone(report['pseudo_r2'])
        if code == cli.EXIT_COV:
            self.assertIsNone(report['covariance'])
            self.assertIn('type', report['error'])

    def test_fit_with_regressor(self):
        """
            Checks a regression fit with covariance and pseudo-R2
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP2, 0.1, 400), np.random.default_rng(3))
        frame = pd.DataFrame({'ret': sample.y, 'rv': sample.x[:, 1]})
        frame.to_csv(self.path('reg.csv'), index=False)
        code = cli.main(['fit', self.path('reg.csv'), '--alpha', '0.1', '--family', 'exp',
                         '--cov-density', 'iid', '--cov-truncvar', 'ind', '-o', self.path('o')])
        self.assertEqual(code, cli.EXIT_OK)
        report = self.load('o')
        self.validate(report)
        self.assertEqual(report['columns'], ['(intercept)', 'rv'])
        self.assertEqual(np.shape(report['covariance']), (4, 4))
        self.assertEqual(report['covariance_method'], 'iid/ind')
        self.assertTrue(all(se > 0 for se in report['standard_errors']))
        self.assertLess(report['pseudo_r2'], 1.0)

    def test_pseudo_r2_domain_warning(self):
        """
            Checks a negative-domain family on positive responses warns and reports null
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP2, 0.1, 400), np.random.default_rng(3))
        self.assertGreater(sample.y.max(), 0.0)
        pd.DataFrame({'ret': sample.y, 'rv': sample.x[:, 1]}).to_csv(self.path('reg.csv'),
                                                                     index=False)
        with self.assertLogs('pyesreg.cli', level='WARNING') as logs:
            code = cli.main(['fit', self.path('reg.csv'), '--alpha', '0.1', '--family',
                             'neg-log', '--cov-density', 'iid', '--cov-truncvar', 'ind',
                             '-o', self.path('o')])
        self.assertIn(code, (cli.EXIT_OK, cli.EXIT_COV))
        self.assertTrue(any('neg-log family needs every response < 0' in line
                            for line in logs.output), logs.output)
        report = self.load('o')
        self.validate(report)
        self.assertIsNone(report['pseudo_r2'])

    def test_non_finite_json(self):
        """
            Checks NaN, infinities and numpy scalars are written as plain JSON
        """
        text = cli._dumps({'a': float('nan'), 'b': [1.0, float('inf')], 'c': np.float64(2.5),
                           'd': (np.int64(3), np.bool_(True)), 'e': np.array([np.nan, -1.0])})
        self.assertEqual(json.loads(text), {'a': None, 'b': [1.0, None], 'c': 2.5,
                                            'd': [3, True], 'e': [None, -1.0]})

    def test_bad_input(self):
        """
            Checks a non-numeric value is reported with its file line
        """
        path = self.write('bad.csv', 'y,x\n1,2\n3,4\nabc,5\n6,7\n')
        code = cli.main(['fit', path, '-o', self.path('o')])
        self.assertEqual(code, cli.EXIT_INPUT)
        report = self.load('o')
        self.assertEqual(report['error']['line'], 4)
        self.assertEqual(report['error']['type'], 'DataFormatError')
        self.assertEqual(cli.main(['fit', self.path('missing.csv'), '-o', self.path('o')]),
                         cli.EXIT_INPUT)

    def test_divergence(self):
        """
            Checks a diverging Z-estimator exits with the fit failure code
        """
        sample = dgp_sample(DgpSpec(DgpKind.DGP1, 0.025, 200), np.random.default_rng(1))
        pd.DataFrame({'y': sample.y, 'x': sample.x[:, 1]}).to_csv(self.path('d.csv'),
                                                                   index=False)
        code = cli.main(['fit', self.path('d.csv'), '--family', 'exp', '--estimator', 'z',
                         '--divergence-bound', '1e-6', '-o', self.path('o')])
        self.assertEqual(code, cli.EXIT_FIT)
        self.assertEqual(self.load('o')['error']['type'], 'DivergenceError')

    def test_config(self):
        """
            Checks config values act as defaults below command-line flags
        """
        config = self.write('esreg.conf', '# defaults\nalpha = 0.2\nfamily = exp\n'
                                          'cov-density = iid\ncov_truncvar = ind\n')
        cli.main(['fit', self.ten_point_csv(), '--config', config, '--family', 'neg-log',
                  '-o', self.path('o')])
        report = self.load('o')
        self.assertEqual(report['alpha'], 0.2)
        self.assertEqual(report['family'], 'neg-log')

        self.assertEqual(cli.read_config(config)['cov_density'], 'iid')
        bogus = self.write('bogus.conf', 'bogus = 1\n')
        self.assertEqual(cli.main(['fit', self.ten_point_csv(), '--config', bogus]),
                         cli.EXIT_INPUT)

    def test_alpha_range(self):
        """
            Checks out-of-range levels are refused by the parser
        """
        with self.assertRaises(SystemExit):
            cli.main(['fit', self.ten_point_csv(), '--alpha', '1.5'])

    def test_forecast_and_murphy(self):
        """
            Checks historical simulation tracks and the Murphy curve of identical tracks
        """
        days = list(pd.bdate_range('2021-01-04', periods=12).strftime('%Y-%m-%d'))
        returns = np.concatenate([TEN_POINTS, [0.0, 1.0]])
        pd.DataFrame({'date': days, 'return': returns, 'rv': np.ones(12)}).to_csv(
            self.path('daily.csv'), index=False)
        code = cli.main(['forecast', self.path('daily.csv'), '--model', 'hs', '--window', '10',
                         '--alpha', '0.2', '-o', self.path('hs.csv')])
        self.assertEqual(code, cli.EXIT_OK)
        track = ForecastTrack.from_csv(self.path('hs.csv'))
        np.testing.assert_array_equal(track.var_forecast, [-3.0, -2.0])
        np.testing.assert_array_equal(track.es_forecast, [-3.5, -2.5])

        code = cli.main(['murphy', self.path('hs.csv'), self.path('hs.csv'), '--alpha', '0.2',
                         '--grid', '-4', '0', '5', '-o', self.path('murphy.csv')])
        self.assertEqual(code, cli.EXIT_OK)
        curve = pd.read_csv(self.path('murphy.csv'))
        self.assertEqual(list(curve.columns), ['threshold', 'mean_diff', 'band'])
        np.testing.assert_array_equal(curve['mean_diff'], np.zeros(5))

    def test_simulate(self):
        """
            Checks a seeded Monte-Carlo run is reproducible and writes its sidecar
        """
        argv = ['simulate', '--dgp', '1', '--family', 'neg-log', '--n', '100', '--reps', '2',
                '--seed', '4', '--threads', '1', '-o']
        self.assertEqual(cli.main(argv + [self.path('a.csv')]), cli.EXIT_OK)
        self.assertEqual(cli.main(argv + [self.path('b.csv')]), cli.EXIT_OK)
        with open(self.path('a.csv')) as fa, open(self.path('b.csv')) as fb:
            self.assertEqual(fa.read(), fb.read())
        sidecar = self.load('a.json')
        self.assertEqual(sidecar['study'], 'mse')
        self.assertEqual(sidecar['reps'], 2)

    def test_covtable(self):
        """
            Checks the covariance table command on the iid normal design
        """
        code = cli.main(['covtable', '--dgp', 'iid-normal', '--family', 'neg-log', 'exp',
                         '--mc-n', '1e6', '-o', self.path('table.csv')])
        self.assertEqual(code, cli.EXIT_OK)
        table = pd.read_csv(self.path('table.csv'), index_col='family')
        self.assertEqual(list(table.index), ['neg-log', 'exp', 'quantile-regression'])
        self.assertAlmostEqual(table.loc['neg-log', 'Q'], table.loc['exp', 'Q'], places=8)
