"""Perspective-preserving warping for two-image stitching."""

__version__ = "0.1.0"
