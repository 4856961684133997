"""Resampling-trace image forgery detection and localization."""
