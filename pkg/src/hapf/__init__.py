"""Time-domain simulator of a three-phase shunt hybrid active power filter."""

__version__ = "0.1.0"
