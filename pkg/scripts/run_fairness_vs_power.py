#!/usr/bin/env python3
"""Average fairness rate versus power for RS/TIN x IGS/PGS.

Extra arguments pass straight through, e.g. ``--trials 5 --threads 8``.
"""
import sys
from pathlib import Path

from rsris.cli import main

HERE = Path(__file__).resolve().parent
sys.exit(main(["--config", str(HERE / "configs" / "fairness_vs_power.ini"), *sys.argv[1:]]))
