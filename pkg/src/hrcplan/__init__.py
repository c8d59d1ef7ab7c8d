"""Predictive human-aware motion planning for a 6-DOF arm."""

__version__ = "0.1.0"
