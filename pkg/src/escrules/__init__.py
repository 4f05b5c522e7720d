"""Fuzzy weighted rule sets for regression with ontology-derived penalties."""

__version__ = "0.1.0"
