"""Anchor-free insulator segmentation and defect detection."""

__version__ = "0.1.0"
