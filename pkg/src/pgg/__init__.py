"""Simulation and analysis toolkit for repeated public goods games with peer sanctions."""

__version__ = "0.1.0"
