"""Data-centric text-to-SQL pipeline toolkit."""

__version__ = "0.1.0"
