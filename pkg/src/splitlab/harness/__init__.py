"""Data, configuration, experiment runner."""
