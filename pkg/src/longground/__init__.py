"""One-pass temporal grounding of queries in long videos."""

__version__ = "0.1.0"
