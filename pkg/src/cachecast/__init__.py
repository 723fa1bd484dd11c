"""Trace-driven cache-demand forecasting with a from-scratch CNN-LSTM."""

__version__ = "0.1.0"
