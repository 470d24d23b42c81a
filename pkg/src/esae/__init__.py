"""Semantic-aware session encryption: keys derived from shared detection history."""

__version__ = "0.1.0"
