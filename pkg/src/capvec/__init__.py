"""capvec: joint image-caption embeddings, caption generation and retrieval
over precomputed image features, all in plain numpy with hand-derived,
finite-difference-verified gradients."""

__version__ = "0.1.0"
