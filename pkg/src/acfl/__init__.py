"""Desk-scale laboratory for cross-form mimicking on skeleton action data."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward  # noqa: F401
