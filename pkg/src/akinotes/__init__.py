"""Predicting acute kidney injury from first-day ICU notes."""

__version__ = "0.1.0"
