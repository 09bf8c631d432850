"""Metastability toolkit for the mean-field Potts model and its disordered variant."""

__version__ = "0.1.0"
