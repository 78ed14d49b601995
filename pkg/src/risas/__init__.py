"""Joint receive antenna selection, RIS phase and precoder design."""

__version__ = "0.1.0"
