"""Desk-scale curved scene-text spotting with adversarially aligned
semantic features."""

__version__ = "0.1.0"
