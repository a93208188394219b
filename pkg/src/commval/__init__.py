"""Extract community values from highly-upvoted comments and measure how they scale."""

__version__ = "0.1.0"
