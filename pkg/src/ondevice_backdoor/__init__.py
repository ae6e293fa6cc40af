"""Desk-scale toolkit: on-device model harvesting, conversion and steganographic backdoor injection."""

__version__ = "0.1.0"
