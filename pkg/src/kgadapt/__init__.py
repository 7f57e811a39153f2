"""Few-shot relational reasoning over knowledge graphs with edge-weighted
context subgraphs and support/query adaptation."""

__version__ = "0.1.0"
