"""Tracking from reinforced template selection."""
