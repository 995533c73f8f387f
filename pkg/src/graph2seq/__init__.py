"""Graph-to-sequence learning with gated graph neural networks on Levi graphs."""

__version__ = "0.1.0"
