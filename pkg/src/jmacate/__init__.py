"""Jackknife model averaging for conditional average treatment effects."""

__version__ = "0.1.0"
