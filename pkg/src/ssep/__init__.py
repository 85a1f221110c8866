"""Symmetric simple exclusion process: stirring simulator, exact flux predictions, statistics."""

__version__ = "0.1.0"
