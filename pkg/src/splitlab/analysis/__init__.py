"""Leakage metrics and executable certificates."""
