"""Diffusive stochastic Schrodinger equation simulator.

Builds SDE coefficients from physical model data, integrates linear and
nonlinear trajectory equations with importance-weight tracking, cross
checks ensembles against the Lindblad master equation, and computes
measurement-output statistics including heterodyne spectra.
"""

__version__ = "0.1.0"
