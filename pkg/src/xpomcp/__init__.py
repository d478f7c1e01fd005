"""Explain and audit POMCP decisions with rule templates instantiated by MAX-SMT."""

__version__ = "0.1.0"
