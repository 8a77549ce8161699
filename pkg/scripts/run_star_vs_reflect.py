#!/usr/bin/env python3
"""Transmitting/reflecting surface against reflect-only and none.

Extra arguments pass straight through, e.g. ``--trials 5 --threads 8``.
"""
import sys
from pathlib import Path

from rsris.cli import main

HERE = Path(__file__).resolve().parent
sys.exit(main(["--config", str(HERE / "configs" / "star_vs_reflect.ini"), *sys.argv[1:]]))
