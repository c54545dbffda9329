"""Refinement of video human-object-interaction predictions through
collaborating language-model agents, with Recall@K evaluation and a
triplet-embedding regularization loss."""

__version__ = "0.1.0"
