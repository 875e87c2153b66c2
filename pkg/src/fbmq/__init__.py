"""Simulation and closed-form analysis of fBm-fed storage processes and Pickands-type constants."""

__version__ = "0.1.0"
