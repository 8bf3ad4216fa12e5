"""Dual-attention BLSTM sequence labeling for product QA analysis."""

__version__ = "0.1.0"
