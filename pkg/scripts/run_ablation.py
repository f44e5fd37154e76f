"""Branch ablation grid (neither / target / detection / both) at 20% noise.

Writes ablation.csv plus the resolved spec under --out (default
runs/ablation).
"""

import sys

from aurelab.cli import main

args = ["ablate", "--spec", "scripts/specs/ablation.spec"]
sys.exit(main(args + sys.argv[1:]))
