#!/usr/bin/env python

# Copyright (c) 2024 pyesreg developers
# Licensed under the MIT license, see LICENSE.

# Script entry point of the pyesreg command line; see `pyesreg_util_run.py --help`.
#   pyesreg_util_run.py fit sample.csv --alpha 0.025 --family neg-log
#   pyesreg_util_run.py simulate --dgp 1 --n 250 1000 --reps 100 --out mse.csv
#   pyesreg_util_run.py covtable --dgp 1 --mc-n 1e7
#   pyesreg_util_run.py forecast daily.csv --window 1000 --out esreg.csv
#   pyesreg_util_run.py murphy esreg.csv hs.csv --alpha 0.025

import sys

from pyesreg.cli import main

if __name__ == '__main__':
    sys.exit(main())
