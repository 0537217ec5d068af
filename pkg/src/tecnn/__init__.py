"""Convolutional network training with transfer-entropy weight feedback."""

__version__ = "0.1.0"
