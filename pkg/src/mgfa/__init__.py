"""Mask-guided attention feature augmentation at desk scale."""

__version__ = "0.1.0"
