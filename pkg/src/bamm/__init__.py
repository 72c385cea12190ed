"""Discrete skeletal-motion generation with a residual-VQ tokenizer and a
masked self-attention transformer."""

__version__ = "0.1.0"
