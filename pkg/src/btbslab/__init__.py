"""Brownian-time Brownian sheet solutions of interacting PDE systems.

Closed-form kernels, tensor quadrature, Monte Carlo sampling and
finite-difference residual checks for the BTBS, Brownian-sheet and
Kuramoto-Sivashinsky-variant solution families.
"""

__version__ = "0.1.0"
