"""Grammar-tree transformer for single-step retrosynthesis."""

__version__ = "0.1.0"
