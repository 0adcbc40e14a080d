"""Deterministic curation pipeline for code pretraining corpora."""

__version__ = "0.1.0"
