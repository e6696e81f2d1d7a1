"""Categorical pattern matching between response and covariate dependency structures."""

__version__ = "0.1.0"
