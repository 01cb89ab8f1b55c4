"""Lossless convexification of optimal control problems with semi-continuous inputs."""

__version__ = "0.1.0"
