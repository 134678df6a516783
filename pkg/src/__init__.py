"""hypercol - sparse hypercolumn pixel prediction."""

__version__ = "0.1.0"
