"""Mask-guided layered depth refinement."""

__version__ = "0.1.0"
