"""Dynamic Bayesian influenza forecasting: SIR core with hierarchical discrepancy."""
__version__ = "0.1.0"
