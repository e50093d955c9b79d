"""Monte Carlo policy search over parametric stopping regions.

Simulate paths, optimize a stopping region family on one batch, estimate
the attained value on a fresh batch, and check the whole machinery against
exact finite-state oracles and convergence-rate formulas.
"""

__version__ = "0.1.0"
