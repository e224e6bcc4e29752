"""Fault detection for LLM classification with mutation-based confidence smoothing."""

__version__ = "0.1.0"
