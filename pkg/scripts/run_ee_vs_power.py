#!/usr/bin/env python3
"""Global energy efficiency versus power budget.

Extra arguments pass straight through, e.g. ``--trials 5 --threads 8``.
"""
import sys
from pathlib import Path

from rsris.cli import main

HERE = Path(__file__).resolve().parent
sys.exit(main(["--config", str(HERE / "configs" / "ee_vs_power.ini"), *sys.argv[1:]]))
