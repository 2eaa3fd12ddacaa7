"""chartforge: draft, execute, repair, and score chart-generation scripts."""

__version__ = "0.1.0"
