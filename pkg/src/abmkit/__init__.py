"""Attention-free temporal modules built on factorized bilinear products, with a small numpy autograd."""

__version__ = "0.1.0"
