"""Data-oriented parallel multi-agent RL engine with Tag benchmarks."""

__version__ = "0.1.0"
