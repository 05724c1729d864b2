"""annotex: verify hypothesis-evidence explanations of computational-graph models."""

__version__ = "0.1.0"
