"""Multi-resolution conditional diffusion forecasting on image-encoded series."""

__version__ = "0.1.0"
