"""Offline deep Q-learning for user scheduling with switching penalties."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
