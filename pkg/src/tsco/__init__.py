"""Two-stage co-optimization of grid dispatch and compute-network scheduling."""

__version__ = "0.1.0"
