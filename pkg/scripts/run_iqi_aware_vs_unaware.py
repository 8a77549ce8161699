#!/usr/bin/env python3
"""Impairment-aware versus impairment-blind designs.

Extra arguments pass straight through, e.g. ``--trials 5 --threads 8``.
"""
import sys
from pathlib import Path

from rsris.cli import main

HERE = Path(__file__).resolve().parent
sys.exit(main(["--config", str(HERE / "configs" / "iqi_aware_vs_unaware.ini"), *sys.argv[1:]]))
