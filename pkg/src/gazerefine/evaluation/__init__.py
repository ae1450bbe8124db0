"""Metrics and experiment runners."""
