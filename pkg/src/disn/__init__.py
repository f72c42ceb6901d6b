"""disn - Environment-disentangled speaker embeddings."""

__version__ = "0.1.0"
