"""Counted co-occurrence edges versus random edges at 20% noise.

Writes edges.csv plus the resolved spec under --out (default runs/edges).
"""

import sys

from aurelab.cli import main

args = ["ablate", "--spec", "scripts/specs/edges.spec"]
sys.exit(main(args + sys.argv[1:]))
