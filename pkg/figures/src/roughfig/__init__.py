"""Headless figure generation from the simulation CSV artifacts."""

from .csvio import (
    EmptyDataError,
    FigureDataError,
    MissingInputError,
    SchemaError,
    Table,
    read_table,
)
from .recipes import RECIPES, Recipe, render_all, running_mean

__all__ = [
    "EmptyDataError",
    "FigureDataError",
    "MissingInputError",
    "RECIPES",
    "Recipe",
    "SchemaError",
    "Table",
    "read_table",
    "render_all",
    "running_mean",
]
