"""Iterative heatmap-refinement instance segmentation on synthetic scenes."""

__version__ = "0.1.0"
