"""Discrete pose-codebook sign language production: codebook learning, text-to-token
translation, de-tokenization and stitching, plus evaluation metrics."""

__version__ = "0.1.0"
