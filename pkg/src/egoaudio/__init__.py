"""Audio-only egocentric action recognition pipeline."""

__version__ = "0.1.0"
