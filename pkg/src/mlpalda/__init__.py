"""Presence-absence multi-label topic model with crowd-annotator support."""

__version__ = "0.1.0"
