"""Gaze estimation and label-free point-of-gaze refinement at desk scale."""

__version__ = "0.1.0"
