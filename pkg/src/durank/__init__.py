"""Duration-supervised, noise-robust pairwise ranking for video highlight detection."""

__version__ = "0.1.0"
