"""Localised global forecasting models: clustered ensembles, specialists and combinations."""

__version__ = "0.1.0"
