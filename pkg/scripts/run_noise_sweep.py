"""Corruption-rate sweep: baseline versus the full method at 10/20/30%.

Writes sweep.csv plus the resolved spec under --out (default runs/sweep).
"""

import sys

from aurelab.cli import main

args = ["sweep", "--spec", "scripts/specs/noise_sweep.spec"]
sys.exit(main(args + sys.argv[1:]))
