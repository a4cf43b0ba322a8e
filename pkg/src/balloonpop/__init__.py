"""Simulation stack for an autonomous balloon-popping multirotor."""

__version__ = "0.1.0"
