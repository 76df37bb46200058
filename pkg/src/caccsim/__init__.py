"""Microscopic freeway CACC simulation with an analytical DSRC packet-reception model."""

__version__ = "0.1.0"
