"""Plotting front end for the solver's figure CSVs (computation-free)."""

__version__ = "0.1.0"

from .render import FigureSpec, SchemaError, in_region, load_columns, render

__all__ = ["FigureSpec", "SchemaError", "render", "load_columns", "in_region"]
