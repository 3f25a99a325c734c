"""Synthetic data, bundled networks, case-study scenarios, metrics and CLI."""
