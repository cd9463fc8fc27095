"""Terrain-aware wireless network deployment planning toolkit."""

__version__ = "0.1.0"
