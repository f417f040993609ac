"""Histology-to-MRI reconstruction and registration toolkit."""

__version__ = "0.1.0"
