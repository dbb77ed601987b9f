"""Integrating out a circle fibre from quantum propagation on a curved tube."""

__version__ = "0.1.0"
