"""Temporal topic-tag forecasting for online health communities."""

__version__ = "0.1.0"
