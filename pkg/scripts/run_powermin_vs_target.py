#!/usr/bin/env python3
"""Mean total power versus per-user rate target, overloaded cells.

Extra arguments pass straight through, e.g. ``--trials 5 --threads 8``.
"""
import sys
from pathlib import Path

from rsris.cli import main

HERE = Path(__file__).resolve().parent
sys.exit(main(["--config", str(HERE / "configs" / "powermin_vs_target.ini"), *sys.argv[1:]]))
