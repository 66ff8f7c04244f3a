# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.cli
Command-line front end. Sub-commands:

  fit       joint regression of a CSV (response first, then regressors) + covariance
  simulate  Monte-Carlo MSE study or covariance-estimator benchmark
  covtable  lower-triangular Frobenius norms of the true asymptotic covariances
  forecast  rolling one-step VaR/ES forecasts of a daily (date, return, rv) CSV
  murphy    Murphy curve of two forecast tracks

Results are JSON on stdout (or --out); error reports are JSON too. Exit codes:
0 ok, 2 input / parse error, 3 fit failure, 4 covariance failure (fit still emitted),
1 any other library failure.
"""

import argparse
import logging
import os
import sys
from datetime import datetime, timezone

try:
    import ujson as json
except ImportError:
    import json

import numpy as np
import pandas as pd

from ._version import __version__
from .covariance import CovOptions, estimate
from .errors import DataFormatError, DomainError, EsregError
from .evaluate import (ForecastTrack, ReturnSeries, dominance_verdict, historical_simulation,
                       murphy_diagram, read_numeric_csv, rolling_joint_forecast)
from .fit import FitOptions, fit
from .simulate import DgpKind, DgpSpec, covariance_benchmark, covariance_table, mc_mse_study
from .speclib import RegressionSample, SpecificationFamily, pseudo_r2

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_INPUT, EXIT_FIT, EXIT_COV = 0, 1, 2, 3, 4

FAMILY_NAMES = ('neg-inverse', 'neg-log', 'neg-sqrt', 'logistic-log', 'exp')
SCHEMA_FILE = os.path.join(os.path.dirname(__file__), 'schemas', 'fit_result.schema.json')


def _count(text):
    """Integer that also accepts 1e7-style input."""
    return int(float(text))


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='flat key=value file supplying option defaults')
    common.add_argument('-v', '--verbose', action='store_true', default=False,
                        help='debug logging on stderr')
    common.add_argument('--seed', type=int, default=0, help='master random seed')
    common.add_argument('--threads', type=int, default=None,
                        help='worker processes (defaults to the number of CPUs)')
    common.add_argument('-o', '--out', help='output file (defaults to console)')
    common.add_argument('--alpha', type=float, default=0.025, help='probability level')
    return common


def _add_fit_options(parser):
    parser.add_argument('--family', choices=FAMILY_NAMES, default='neg-log')
    parser.add_argument('--g1', choices=('zero', 'linear'), default='zero')
    parser.add_argument('--estimator', choices=('m', 'z'), default='m')
    parser.add_argument('--translate', choices=('auto', 'on', 'off'), default='auto',
                        help='fit on Y - max(Y) (auto: negative-domain families)')
    parser.add_argument('--divergence-bound', dest='divergence_bound', type=float, default=None,
                        help='Z-estimator aborts once max|theta_e| exceeds this')


def get_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(description='joint VaR / Expected Shortfall regression')
    parser.add_argument('--version', action='version', version='pyesreg %s' % __version__)
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    p_fit = commands.add_parser('fit', parents=[common], help='fit a CSV sample')
    p_fit.add_argument('input', help='CSV with header; response first, regressors after')
    _add_fit_options(p_fit)
    p_fit.add_argument('--cov-density', choices=('iid', 'nid'), default='nid')
    p_fit.add_argument('--cov-truncvar', choices=('ind', 'scl-n', 'scl-sp'), default='scl-sp')
    p_fit.add_argument('--bootstrap', type=int, default=0, metavar='B',
                       help='bootstrap replicates (0: plug-in sandwich)')
    p_fit.add_argument('--no-intercept', dest='no_intercept', action='store_true', default=False,
                       help='do not prepend a constant column')

    p_sim = commands.add_parser('simulate', parents=[common], help='Monte-Carlo studies')
    p_sim.add_argument('--study', choices=('mse', 'covbench'), default='mse')
    p_sim.add_argument('--dgp', nargs='+', default=['1'], help='1, 2, 3 or iid-normal')
    p_sim.add_argument('--family', nargs='+', choices=FAMILY_NAMES, default=list(FAMILY_NAMES))
    p_sim.add_argument('--n', nargs='+', type=_count, default=[250, 1000, 2000])
    p_sim.add_argument('--reps', type=_count, default=1000)
    p_sim.add_argument('--bootstrap', type=int, default=100, metavar='B',
                       help='bootstrap replicates per benchmark replication')

    p_cov = commands.add_parser('covtable', parents=[common],
                                help='Frobenius norms of true asymptotic covariances')
    p_cov.add_argument('--dgp', default='1')
    p_cov.add_argument('--family', nargs='+', choices=FAMILY_NAMES, default=list(FAMILY_NAMES))
    p_cov.add_argument('--mc-n', dest='mc_n', type=_count, default=10 ** 7)

    p_fc = commands.add_parser('forecast', parents=[common], help='rolling VaR/ES forecasts')
    p_fc.add_argument('input', help='daily CSV with header date,return,rv')
    p_fc.add_argument('--model', choices=('regression', 'hs'), default='regression')
    p_fc.add_argument('--window', type=int, default=1000)
    _add_fit_options(p_fc)

    p_mu = commands.add_parser('murphy', parents=[common], help='Murphy curve of two tracks')
    p_mu.add_argument('track_a')
    p_mu.add_argument('track_b')
    p_mu.add_argument('--score', choices=('homogeneous-grid', 'elementary'),
                      default='homogeneous-grid')
    p_mu.add_argument('--grid', nargs=3, type=float, metavar=('LO', 'HI', 'NUM'))
    return parser


def read_config(path):
    """key=value lines; '#' and ';' start comments; '-' and '_' are interchangeable in keys."""
    values = {}
    with open(path) as fs:
        for number, line in enumerate(fs, 1):
            line = line.strip()
            if not line or line[0] in '#;':
                continue
            if '=' not in line:
                raise DataFormatError("Expected key=value", number)
            key, value = line.split('=', 1)
            values[key.strip().lstrip('-').replace('-', '_')] = value.strip()
    return values


def _coerce(action, raw):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return raw.lower() in ('1', 'true', 'yes', 'on')
    convert = action.type or str
    if action.nargs in ('+', '*') or isinstance(action.nargs, int):
        return [convert(item) for item in raw.replace(',', ' ').split()]
    return convert(raw)


def apply_config(parser, values):
    """Feeds config values to every sub-command's set_defaults, below command-line flags."""
    known = set()
    for action in parser._subparsers._group_actions:
        for sub in action.choices.values():
            found = {a.dest: a for a in sub._actions if a.dest in values}
            sub.set_defaults(**{dest: _coerce(a, values[dest]) for dest, a in found.items()})
            known.update(found)
    unknown = set(values) - known - {'config'}
    if unknown:
        raise DataFormatError("Unknown config keys: %s" % ', '.join(sorted(unknown)))


def _jsonable(obj):
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(obj, dict):
        return {key: _jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(value) for value in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite_or_none(obj)
    return obj


def _dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True)


def _emit(args, payload):
    text = _dumps(payload)
    if args.out:
        with open(args.out, 'w') as fs:
            fs.write(text + '\n')
    else:
        print(text)


def _error_payload(command, exc):
    payload = {'command': command, 'error': {'type': type(exc).__name__, 'message': str(exc)}}
    for attr in ('line', 'row', 'failures'):
        if getattr(exc, attr, None) is not None:
            payload['error'][attr] = getattr(exc, attr)
    return payload


def _finite_or_none(value):
    return float(value) if np.isfinite(value) else None


def _metadata():
    return {'version': __version__,
            'timestamp': datetime.now(timezone.utc).isoformat(timespec='seconds')}


def _family(args):
    return SpecificationFamily.from_name(args.family, args.g1)


def _fit_options(args):
    translate = {'auto': None, 'on': True, 'off': False}[args.translate]
    return FitOptions(rng_seed=args.seed, translate=translate, estimator=args.estimator,
                      divergence_bound=args.divergence_bound)


def read_regression_csv(path, intercept=True):
    """
    Response in the first column, regressors in the others. A constant column is
    prepended unless intercept is False; then the design is used as given and serves as
    its own intercept only when its first column is all ones.
    """
    header = pd.read_csv(path, nrows=0).columns
    if len(header) < 1:
        raise DataFormatError("CSV has no columns", 1)
    frame = read_numeric_csv(path, [str(col).strip().lower() for col in header], ())
    values = frame.to_numpy(dtype=float)
    y, x = values[:, 0], values[:, 1:]
    if intercept:
        x = np.column_stack([np.ones(y.size), x])
        return RegressionSample(y, x), ['(intercept)'] + list(frame.columns[1:])
    if x.shape[1] == 0:
        raise DataFormatError("--no-intercept needs at least one regressor column", 1)
    has_constant = bool(np.all(x[:, 0] == 1.0))
    return RegressionSample(y, x, intercept=has_constant), list(frame.columns[1:])


def cmd_fit(args):
    try:
        sample, columns = read_regression_csv(args.input, not args.no_intercept)
    except (EsregError, ValueError, OSError) as exc:
        _emit(args, _error_payload('fit', exc))
        return EXIT_INPUT
    fam, alpha = _family(args), args.alpha
    fitopts = _fit_options(args)
    if not sample.intercept and args.translate == 'on':
        logger.warning("Design without intercept, translation disabled")
        fitopts = fitopts._replace(translate=False)
    try:
        result = fit(fam, alpha, sample, fitopts)
    except (EsregError, ValueError) as exc:
        _emit(args, _error_payload('fit', exc))
        return EXIT_FIT

    r2 = None
    if sample.intercept and sample.k > 1:
        try:
            restricted = fit(fam, alpha, sample.intercept_only(), fitopts)
            r2 = pseudo_r2(fam, alpha, sample, result.theta, restricted.theta)
        except DomainError as exc:
            logger.warning("pseudo-R2 not available: the %s family needs every response < 0 "
                           "for its non-negative loss, choose exp or logistic-log for "
                           "positive data (%s)", fam.name, exc)
        except ZeroDivisionError as exc:
            logger.warning("pseudo-R2 not available: %s", exc)

    payload = {
        'command': 'fit', 'alpha': alpha, 'family': fam.name, 'g1': args.g1,
        'estimator': args.estimator, 'columns': columns,
        'theta_q': result.theta.theta_q.tolist(), 'theta_e': result.theta.theta_e.tolist(),
        'pseudo_r2': r2, 'covariance': None, 'standard_errors': None,
        'covariance_method': None, 'error': None,
        'diagnostics': {'avg_loss': result.avg_loss, 'ils_iterations': result.ils_iterations,
                        'translation_offset': result.translation_offset,
                        'converged': bool(result.converged),
                        'psi_norm_at_solution': _finite_or_none(
                            result.psi_norm_at_solution)},
        'metadata': dict(_metadata(), n=sample.n, k=sample.k),
    }
    covopts = CovOptions(args.cov_density, {'scl-n': 'scl-N'}.get(args.cov_truncvar,
                                                                 args.cov_truncvar),
                         args.bootstrap, rng_seed=args.seed)
    code = EXIT_OK
    try:
        cov = estimate(result, sample, fam, alpha, covopts, fitopts, args.threads)
        payload['covariance'] = cov.matrix.tolist()
        payload['standard_errors'] = np.sqrt(np.diag(cov.matrix)).tolist()
        payload['covariance_method'] = covopts.label
    except (EsregError, ValueError) as exc:
        payload['error'] = _error_payload('fit', exc)['error']
        code = EXIT_COV
    _emit(args, payload)
    return code


def cmd_simulate(args):
    dgps = [DgpKind.from_name(name) for name in args.dgp]
    families = [SpecificationFamily.from_name(name) for name in args.family]
    if args.study == 'mse':
        report = mc_mse_study(dgps, families, args.n, args.reps, args.seed, args.alpha,
                              workers=args.threads)
    else:
        report = covariance_benchmark(dgps, families, args.n, args.reps, args.seed, args.alpha,
                                      bootstrap_reps=args.bootstrap, workers=args.threads)
    payload = dict(report.to_dict(), command='simulate', alpha=args.alpha,
                   metadata=_metadata())
    if args.out:
        report.to_csv(args.out)
        with open(os.path.splitext(args.out)[0] + '.json', 'w') as fs:
            fs.write(_dumps(payload) + '\n')
        print("Monte-Carlo report saved (%d cells, %d replications)"
              % (len(report.cells), report.reps))
    else:
        print(_dumps(payload))
    return EXIT_OK


def cmd_covtable(args):
    spec = DgpSpec(DgpKind.from_name(args.dgp), args.alpha)
    families = [SpecificationFamily.from_name(name) for name in args.family]
    table = covariance_table(spec, families, args.mc_n, args.seed)
    if args.out:
        table.to_csv(args.out, float_format='%.17g')
        print("Covariance table saved (%s, mc_n=%d)" % (spec.kind.value, args.mc_n))
    else:
        _emit(args, {'command': 'covtable', 'dgp': spec.kind.value, 'mc_n': args.mc_n,
                     'table': {fam: {col: (None if pd.isna(val) else float(val))
                                     for col, val in row.items()}
                               for fam, row in table.iterrows()},
                     'metadata': _metadata()})
    return EXIT_OK


def cmd_forecast(args):
    try:
        series = ReturnSeries.from_csv(args.input)
    except (DataFormatError, OSError, ValueError) as exc:
        _emit(args, _error_payload('forecast', exc))
        return EXIT_INPUT
    if args.model == 'hs':
        track = historical_simulation(series, args.alpha, args.window)
    else:
        track = rolling_joint_forecast(series, args.alpha, args.window, _family(args),
                                       _fit_options(args), args.threads)
    if args.out:
        track.to_csv(args.out)
    else:
        print(track.to_frame().to_csv(index=False, float_format='%.17g'), end='')
    sys.stderr.write("Forecast track %s: %d days, %d gaps\n"
                     % (track.label, len(track), int(np.sum(~track.valid))))
    return EXIT_OK


def cmd_murphy(args):
    try:
        track_a = ForecastTrack.from_csv(args.track_a, 'a')
        track_b = ForecastTrack.from_csv(args.track_b, 'b')
    except (DataFormatError, OSError, ValueError) as exc:
        _emit(args, _error_payload('murphy', exc))
        return EXIT_INPUT
    grid = tuple(args.grid) if args.grid else None
    curve = murphy_diagram(track_a, track_b, args.alpha, grid, args.score)
    frame = pd.DataFrame({'threshold': curve.thresholds, 'mean_diff': curve.mean_diff,
                          'band': curve.band_halfwidth})
    if args.out:
        frame.to_csv(args.out, index=False, float_format='%.17g')
    else:
        print(frame.to_csv(index=False, float_format='%.17g'), end='')
    sys.stderr.write("Murphy curve over %d days: %s\n"
                     % (curve.n_days, dominance_verdict(curve).value))
    return EXIT_OK


COMMANDS = {'fit': cmd_fit, 'simulate': cmd_simulate, 'covtable': cmd_covtable,
            'forecast': cmd_forecast, 'murphy': cmd_murphy}


def main(argv=None):
    parser = get_parser()
    pre, _ = _common_parser().parse_known_args(argv)
    if pre.config:
        try:
            apply_config(parser, read_config(pre.config))
        except (DataFormatError, OSError) as exc:
            print(_dumps(_error_payload('config', exc)))
            return EXIT_INPUT
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s',
                        stream=sys.stderr)
    if not 0.0 < args.alpha < 1.0:
        parser.error("--alpha must lie in (0, 1)")
    try:
        return COMMANDS[args.command](args)
    except (EsregError, ValueError) as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        print(_dumps(_error_payload(args.command, exc)))
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
