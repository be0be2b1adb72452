"""Weighted variable-margin contrastive learning for music performance assessment."""

__version__ = "0.1.0"
