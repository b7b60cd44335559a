"""Numerical KAM reducibility for the quantum harmonic oscillator with log-decaying potentials."""

__version__ = "0.1.0"
