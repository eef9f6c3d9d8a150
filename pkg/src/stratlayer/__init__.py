"""Numerical laboratory for inviscid boundary layers of strongly stratified flow."""

__version__ = "0.1.0"
