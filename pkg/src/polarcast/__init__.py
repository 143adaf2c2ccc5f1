"""Desk-scale first-motion polarity lab: data pipeline, from-scratch CNN,
ensemble uncertainty analysis, SOM-based cleaning loop, and a review service."""

__version__ = "0.1.0"
