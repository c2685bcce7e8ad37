"""Spectra of Neumann Laplacians on domains with room-and-passage corrugations."""

__version__ = "0.1.0"
