"""Mean-field and exact posterior inference for bounded-SNR Bayesian linear regression."""

__version__ = "0.1.0"
