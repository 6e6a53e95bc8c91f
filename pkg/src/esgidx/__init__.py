"""Weak supervision from ESG disclosure content indices.

Turns per-page report text plus disclosure content indices into contrastive
triplets, benchmarks embedding retrieval with page-level ranking metrics, and
auto-generates ESRS content indices scored by precision/recall/F1.
"""

__version__ = "0.1.0"
