"""Pulsed optomechanical position measurement: simulation, tomography and noise analysis."""

__version__ = "0.1.0"
