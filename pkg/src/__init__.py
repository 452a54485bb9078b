"""
paramp

Analytic engine and stochastic simulator for a substrate-mediated
nondegenerate mechanical parametric amplifier.
"""

__version__ = "1.0.0"
__author__ = "paramp developers"
