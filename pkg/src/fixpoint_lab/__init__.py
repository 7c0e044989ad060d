"""Fixed-point / implicit-model laboratory."""

__version__ = "0.1.0"
