"""Multimodal multiple-instance learning on physiological time series."""
__version__ = "0.1.0"
