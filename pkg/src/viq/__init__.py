"""Task-based image quality assessment with usable-information metrics."""

__version__ = "0.1.0"
