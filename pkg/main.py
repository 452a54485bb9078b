#!/usr/bin/env python3
"""
paramp
Analytic engine and stochastic simulator for a substrate-mediated
nondegenerate mechanical parametric amplifier: threshold and two-mode
dissipation, phase-dependent gain, and two-mode thermomechanical squeezing.

Run `python main.py --help` for the subcommands.
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
