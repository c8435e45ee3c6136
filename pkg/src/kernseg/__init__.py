"""Kernel sparse coding, kernel K-lines dictionaries and tumor segmentation on 8-bit images."""

__version__ = "0.1.0"
