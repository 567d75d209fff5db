"""Retrieval-augmented question answering over web pages and a knowledge-graph API."""

__version__ = "0.1.0"
