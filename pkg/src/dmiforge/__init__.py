"""Weak supervision for joint data-to-text generation and understanding."""

__version__ = "0.1.0"
