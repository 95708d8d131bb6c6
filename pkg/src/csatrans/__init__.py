"""Structure-aware positional encodings and SBM attention for code summarization."""

__version__ = "0.1.0"
