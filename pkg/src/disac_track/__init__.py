"""Cooperative 3D UE tracking over distributed access points with a GM-PHD filter."""

__version__ = "0.1.0"
