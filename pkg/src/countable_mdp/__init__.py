"""Executable countable MDPs: lazy models, memory-based strategies, simulation,
exact recursions for the tree-chain counterexample, and one-bit strategy synthesis."""

__version__ = "0.1.0"
