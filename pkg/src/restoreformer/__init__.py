"""Desk-scale blind face restoration with a vector-quantized prior dictionary."""
__version__ = "0.1.0"
