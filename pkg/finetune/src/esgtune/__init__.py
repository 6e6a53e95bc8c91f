"""Contrastive fine-tuning of text encoders on retrieval triplet files."""

__version__ = "0.1.0"
