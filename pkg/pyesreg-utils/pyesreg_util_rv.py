#!/usr/bin/env python

# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

# Aggregates intraday returns (CSV: date,return) into the daily CSV (date,return,rv)
# read by `pyesreg forecast`.

import argparse
import logging
import sys

from pyesreg.errors import DataFormatError, EmptyDayError
from pyesreg.evaluate import daily_from_intraday, read_numeric_csv

logger = logging.getLogger(__name__)


def get_parser():
    parser = argparse.ArgumentParser(description='pyesreg realized-volatility aggregator')
    parser.add_argument('input', help='intraday CSV with header date,return')
    parser.add_argument(
        '-o', '--output', dest='output',
        help='output file name (defaults to console)')
    parser.add_argument(
        '-v', '--verbose', action='store_true', default=False,
        help='debug logging')
    return parser


def main(args):
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        intraday = read_numeric_csv(args.input, ('date', 'return'))
        daily = daily_from_intraday(intraday)
    except (DataFormatError, EmptyDayError, OSError) as exc:
        sys.stderr.write("ERROR: %s\n" % exc)
        return 2
    logger.debug("%d intraday rows aggregated into %d days", len(intraday), len(daily))

    if args.output:
        daily.to_csv(args.output, index=False, float_format='%.17g')
        print("Daily RV file saved (%d days)" % len(daily))
    else:
        print(daily.to_csv(index=False, float_format='%.17g'), end='')
    return 0


if __name__ == '__main__':
    parser = get_parser()
    args = parser.parse_args()
    sys.exit(main(args))
