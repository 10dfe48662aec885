"""Entropy-constrained training, MAP quantization and entropy coding of small MLPs."""

__version__ = "0.1.0"
