"""Latency forecasting pipeline for a simulated quorum-replicated KV slice."""

__version__ = "0.1.0"
