"""Backprop-free on-device adaptation with cloud-generated model heads."""

__version__ = "0.1.0"
