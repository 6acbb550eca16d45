"""Retrieval and evaluation toolkit for question answering over regulatory text."""

__version__ = "0.1.0"
