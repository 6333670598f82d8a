"""fastslow: numerical laboratory for fast-slow expanding circle maps."""

__version__ = "0.1.0"
