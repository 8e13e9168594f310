"""Command-line surface: ``python -m dynsal`` / ``dynsal``."""
from dynsal.cli.main import build_parser, main

__all__ = ["build_parser", "main"]
