"""
ofbm - simulation and verification toolkit for operator fractional Brownian motion.

Exact grid sampling from the reversible closed-form covariance, the Poisson
telegraph and partial-sum approximation schemes, and a Monte Carlo diagnostics
engine that checks their convergence against analytic targets.
"""

__version__ = "0.1.0"
