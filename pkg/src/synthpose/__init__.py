"""Synthetic wheelchair-user pose data: generation, annotation, statistics,
metric evaluation, and the human motion-rating service."""

__version__ = "0.1.0"
