"""Simulated survey respondents mapped onto the two-axis cultural value map."""

__version__ = "0.1.0"
