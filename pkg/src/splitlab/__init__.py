"""Two-party split learning laboratory."""

__version__ = "0.1.0"
