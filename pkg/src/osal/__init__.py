"""Pool-based active learning with an open-set variational classifier."""

__version__ = "0.1.0"
