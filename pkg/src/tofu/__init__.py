"""Indirect time-of-flight simulation, classical reconstruction and RGB fusion at toy scale."""

__version__ = "0.1.0"
