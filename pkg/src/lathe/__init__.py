"""Passive and active structure learning for homogeneous Ising trees."""

__version__ = "0.1.0"
