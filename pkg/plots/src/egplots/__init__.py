"""Figures from training-metrics CSVs: per-worker mean lines with min-max
shaded bands, one per labeled input file."""

from . import curves

__version__ = "0.1.0"

__all__ = ["curves", "__version__"]
