# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

"""pyesreg.evaluate
One-step-ahead VaR/ES forecasting and forecast comparison:

  realized_volatility()      -- daily RV from intraday returns
  rolling_joint_forecast()   -- rolling-window joint regression on lagged RV
  historical_simulation()    -- rolling empirical quantile / tail mean
  murphy_diagram()           -- mean score differences over a grid of consistent scores
  dominance_verdict()        -- reads a Murphy curve with its pointwise bands
"""

import logging
import re
from collections import namedtuple
from enum import Enum

import numpy as np
import pandas as pd
from scipy.special import expit

from . import _pool
from .errors import DataFormatError, EmptyDayError, EsregError, MisalignedTracksError
from .fit import FitOptions, m_fit
from .speclib import G2Kind, ProbabilityLevel, RegressionSample, SpecificationFamily

logger = logging.getLogger(__name__)

BAND_Z = 1.96


def _check_dates(dates):
    stamps = pd.to_datetime(pd.Index(dates), errors='coerce')
    if stamps.isna().any():
        raise DataFormatError("Unparseable date %r" % dates[int(np.argmax(stamps.isna()))],
                              int(np.argmax(stamps.isna())) + 2)
    if len(stamps) > 1 and not np.all(np.diff(stamps.asi8) > 0):
        raise ValueError("Dates must be strictly increasing")


class ReturnSeries(object):
    """
    Daily returns with their realized volatility.

    :param dates: strictly increasing day identifiers (ISO strings or timestamps)
    :param daily_returns: real vector
    :param rv: realized volatility per day, non-negative
    """

    def __init__(self, dates, daily_returns, rv):
        self.dates = list(dates)
        self.daily_returns = np.asarray(daily_returns, dtype=float)
        self.rv = np.asarray(rv, dtype=float)
        if not len(self.dates) == self.daily_returns.size == self.rv.size:
            raise ValueError("dates, returns and rv differ in length (%d, %d, %d)"
                             % (len(self.dates), self.daily_returns.size, self.rv.size))
        if np.any(self.rv < 0.0):
            raise ValueError("Realized volatility must be non-negative")
        _check_dates(self.dates)

    def __len__(self):
        return len(self.dates)

    @classmethod
    def from_csv(cls, path):
        """Reads a CSV with header date,return,rv."""
        frame = read_numeric_csv(path, ('date', 'return', 'rv'))
        return cls(frame['date'].tolist(), frame['return'].to_numpy(), frame['rv'].to_numpy())

    def __repr__(self):
        return "ReturnSeries(%d days, %s..%s)" % (len(self), self.dates[0], self.dates[-1])


def read_numeric_csv(path, columns, text_columns=('date',)):
    """
    Loads a CSV with the given header columns, every column but the text ones numeric.

    :raises: DataFormatError with the 1-based file line of the first bad row
    """
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        match = re.search(r'line (\d+)', str(exc))
        raise DataFormatError("Malformed CSV: %s" % exc, int(match.group(1)) if match else None)
    except pd.errors.EmptyDataError:
        raise DataFormatError("Empty CSV", 1)
    frame.columns = [str(col).strip().lower() for col in frame.columns]
    missing = [col for col in columns if col not in frame.columns]
    if missing:
        raise DataFormatError("Missing columns %s" % ', '.join(missing), 1)
    frame = frame[list(columns)]
    for col in columns:
        if col in text_columns:
            bad = frame[col].isna()
        else:
            frame[col] = pd.to_numeric(frame[col], errors='coerce')
            bad = ~np.isfinite(frame[col].to_numpy(dtype=float))
        if bad.any():
            row = int(np.argmax(np.asarray(bad)))
            raise DataFormatError("Bad value in column %r" % col, row + 2)
    return frame


def realized_volatility(intraday):
    """
    Per day, the square root of the sum of squared intraday returns.

    :param intraday: iterable of per-day sequences of intraday returns
    :raises: EmptyDayError for a day without returns
    """
    rv = []
    for day, returns in enumerate(intraday):
        returns = np.asarray(returns, dtype=float)
        if returns.size == 0:
            raise EmptyDayError("Day %d has no intraday returns" % day)
        rv.append(np.sqrt(np.sum(returns ** 2)))
    return np.array(rv)


def daily_from_intraday(frame):
    """
    Aggregates an intraday frame (date, return) into daily (date, return, rv); the daily
    return is the sum of the intraday (log) returns.
    """
    grouped = frame.groupby('date', sort=True)['return']
    dates = [date for date, _ in grouped]
    days = [group.to_numpy() for _, group in grouped]
    return pd.DataFrame({'date': dates,
                         'return': [returns.sum() for returns in days],
                         'rv': realized_volatility(days)})


class ForecastTrack(object):
    """
    One-step-ahead VaR and ES forecasts with the realized returns they are scored on.
    Days without a forecast carry NaN.

    :param label: model name
    :param params: optional per-day fitted JointParams (None for gaps)
    """

    def __init__(self, dates, var_forecast, es_forecast, realized, label, params=None):
        self.dates = list(dates)
        self.var_forecast = np.asarray(var_forecast, dtype=float)
        self.es_forecast = np.asarray(es_forecast, dtype=float)
        self.realized = np.asarray(realized, dtype=float)
        self.label = label
        self.params = params
        if not len(self.dates) == self.var_forecast.size == self.es_forecast.size \
                == self.realized.size:
            raise ValueError("Track columns differ in length")

    def __len__(self):
        return len(self.dates)

    @property
    def valid(self):
        return np.isfinite(self.var_forecast) & np.isfinite(self.es_forecast)

    def ordering_violations(self):
        """Days with ES forecast above the VaR forecast."""
        valid = self.valid
        return np.flatnonzero(valid & (self.es_forecast > self.var_forecast))

    def to_frame(self):
        return pd.DataFrame({'date': self.dates, 'var': self.var_forecast,
                             'es': self.es_forecast, 'realized': self.realized})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')

    @classmethod
    def from_csv(cls, path, label=None):
        frame = pd.read_csv(path, dtype={'date': str})
        for col in ('date', 'var', 'es', 'realized'):
            if col not in frame.columns:
                raise DataFormatError("Track file lacks column %r" % col, 1)
        return cls(frame['date'].tolist(), frame['var'], frame['es'], frame['realized'],
                   label or str(path))

    def __repr__(self):
        return "ForecastTrack(%r, %d days, %d gaps)" % (self.label, len(self),
                                                        int(np.sum(~self.valid)))


def _window_forecast(args):
    y, rv_lagged, rv_now, fam, alpha, fitopts = args
    if np.ptp(rv_lagged) == 0.0:
        x, x_next = None, np.array([1.0])
    else:
        x = np.column_stack([np.ones(y.size), rv_lagged])
        x_next = np.array([1.0, rv_now])
    try:
        fit = m_fit(fam, alpha, RegressionSample(y, x), fitopts)
    except (EsregError, ValueError) as exc:
        return np.nan, np.nan, None, str(exc)
    return float(x_next @ fit.theta.theta_q), float(x_next @ fit.theta.theta_e), fit.theta, None


def rolling_joint_forecast(series, alpha, window=1000, fam=None, fitopts=None, workers=1):
    """
    For every day t > window: fits r_s on (1, RV_{s-1}) over the days s = t-window..t-1
    and forecasts VaR_t and ES_t at (1, RV_{t-1}). A window with constant RV falls back to
    the intercept-only model; failed fits leave NaN gaps.

    :param fam: SpecificationFamily, default NegLog
    :return: ForecastTrack labelled 'esreg-<family>'
    """
    alpha = ProbabilityLevel(alpha)
    fam = fam or SpecificationFamily(G2Kind.NEG_LOG)
    fitopts = fitopts or FitOptions()
    n = len(series)
    if n <= window + 1:
        raise ValueError("Series of %d days too short for window %d" % (n, window))
    r, rv = series.daily_returns, series.rv
    days = range(window + 1, n)
    tasks = [(r[t - window:t], rv[t - window - 1:t - 1], rv[t - 1], fam, alpha, fitopts)
             for t in days]
    results = _pool.pool_map(_window_forecast, tasks, workers)
    var = np.array([res[0] for res in results])
    es = np.array([res[1] for res in results])
    failed = [(series.dates[t], res[3]) for t, res in zip(days, results) if res[3]]
    for date, message in failed:
        logger.warning("Forecast for %s missing: %s", date, message)
    track = ForecastTrack([series.dates[t] for t in days], var, es, r[window + 1:],
                          'esreg-%s' % fam.name, [res[2] for res in results])
    violations = track.ordering_violations()
    if violations.size:
        logger.warning("%d days with ES forecast above VaR forecast (first %s)",
                       violations.size, track.dates[violations[0]])
    logger.info("Rolling forecast: %d days, %d gaps", len(track), len(failed))
    return track


def historical_simulation(series, alpha, window=250):
    """Per day, the empirical alpha-quantile and tail mean of the trailing window."""
    alpha = ProbabilityLevel(alpha)
    r = series.daily_returns
    n = len(series)
    if n <= window:
        raise ValueError("Series of %d days too short for window %d" % (n, window))
    var = np.empty(n - window)
    es = np.empty(n - window)
    for i, t in enumerate(range(window, n)):
        past = r[t - window:t]
        var[i] = np.quantile(past, alpha, method='inverted_cdf')
        es[i] = past[past <= var[i]].mean()
    return ForecastTrack(series.dates[window:], var, es, r[window:], 'hs-%d' % window)


class ScoreFamily(Enum):
    HOMOGENEOUS_GRID = 'homogeneous-grid'
    ELEMENTARY = 'elementary'


def _grid_scores(score_family, alpha, thresholds, q, e, y):
    """T x m matrix of scores, one column per grid member."""
    v = np.asarray(thresholds, dtype=float)[None, :]
    q, e, y = q[:, None], e[:, None], y[:, None]
    hit = (y <= q).astype(float)
    if score_family is ScoreFamily.ELEMENTARY:
        return (e > v) * (hit * (q - y) / alpha - (q - v))
    # joint loss with G1 = 0 and curly G2(z - v) = log(1 + exp(z - v))
    z = e - v
    return expit(z) * (e - q + (q - y) * hit / alpha) - np.logaddexp(0.0, z)


MurphyCurve = namedtuple('MurphyCurve', 'thresholds mean_diff band_halfwidth n_days score_family')


def default_grid(track_a, track_b, num=101):
    """Equidistant thresholds from the lowest ES to the highest VaR forecast."""
    values = np.concatenate([track_a.es_forecast, track_a.var_forecast,
                             track_b.es_forecast, track_b.var_forecast])
    values = values[np.isfinite(values)]
    lo, hi = values.min(), values.max()
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    return np.linspace(lo, hi, num)


def murphy_diagram(track_a, track_b, alpha, grid_spec=None,
                   score_family=ScoreFamily.HOMOGENEOUS_GRID):
    """
    Mean over days of score(a) - score(b) at every grid threshold, with 95% pointwise
    normal bands 1.96 sd / sqrt(T). Days with a gap in either track are dropped.

    :param grid_spec: array of thresholds, (lo, hi, num), or None for default_grid()
    :param score_family: 'homogeneous-grid' scores with the joint loss of the logistic
        family shifted by each threshold; 'elementary' with the extremal members
        curly G2(z) = (z - v)+
    :raises: MisalignedTracksError unless both tracks cover the same dates
    """
    alpha = ProbabilityLevel(alpha)
    score_family = ScoreFamily(score_family)
    if track_a.dates != track_b.dates:
        raise MisalignedTracksError("Tracks %r and %r cover different dates"
                                    % (track_a.label, track_b.label))
    if not np.array_equal(track_a.realized, track_b.realized, equal_nan=True):
        raise MisalignedTracksError("Tracks disagree on realized returns")
    if grid_spec is None:
        thresholds = default_grid(track_a, track_b)
    elif isinstance(grid_spec, tuple) and len(grid_spec) == 3:
        thresholds = np.linspace(grid_spec[0], grid_spec[1], int(grid_spec[2]))
    else:
        thresholds = np.asarray(grid_spec, dtype=float)

    keep = track_a.valid & track_b.valid & np.isfinite(track_a.realized)
    y = track_a.realized[keep]
    if y.size < 2:
        raise ValueError("Need at least 2 common forecast days, got %d" % y.size)
    diff = _grid_scores(score_family, alpha, thresholds, track_a.var_forecast[keep],
                        track_a.es_forecast[keep], y) \
        - _grid_scores(score_family, alpha, thresholds, track_b.var_forecast[keep],
                       track_b.es_forecast[keep], y)
    mean_diff = diff.mean(axis=0)
    band = BAND_Z * diff.std(axis=0, ddof=1) / np.sqrt(y.size)
    logger.debug("Murphy curve over %d days, %d dropped", y.size, int(np.sum(~keep)))
    return MurphyCurve(thresholds, mean_diff, band, int(y.size), score_family)


class Verdict(Enum):
    A_DOMINATES = 'a-dominates'
    B_DOMINATES = 'b-dominates'
    INCONCLUSIVE = 'inconclusive'


def dominance_verdict(curve):
    """A dominates iff mean_diff + band < 0 everywhere; B iff mean_diff - band > 0 everywhere."""
    upper = curve.mean_diff + curve.band_halfwidth
    lower = curve.mean_diff - curve.band_halfwidth
    if np.all(upper < 0.0):
        return Verdict.A_DOMINATES
    if np.all(lower > 0.0):
        return Verdict.B_DOMINATES
    return Verdict.INCONCLUSIVE
