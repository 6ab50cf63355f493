"""Real vs. virtual video-call background detection from co-occurrence and residual features."""

__version__ = "0.1.0"
