"""Simulation and analysis of an entanglement-enhanced Lorentz-invariance test
with two trapped 40Ca+ ions."""

__version__ = "0.1.0"
