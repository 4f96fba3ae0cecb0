"""Embedding / image-generation sidecar service."""

__version__ = "0.1.0"
