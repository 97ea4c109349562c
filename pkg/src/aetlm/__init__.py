"""Acousto-electric tomography: SCEM forward model and Levenberg-Marquardt reconstruction."""

__version__ = "0.1.0"
