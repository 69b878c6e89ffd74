"""Long-tailed multi-label training, inference refinement, and evaluation toolkit."""

__version__ = "0.1.0"
