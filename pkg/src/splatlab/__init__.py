"""Desk-scale 3D Gaussian splatting engine with a poisoning laboratory."""

__version__ = "0.1.0"
