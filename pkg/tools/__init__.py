"""Helper CLIs for segquant fixtures and repeatability checks."""

__all__ = []
