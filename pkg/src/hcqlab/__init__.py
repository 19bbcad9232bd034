"""Hybrid quantum-classical classifiers, white-box attacks, and robustness sweeps."""

__version__ = "0.1.0"
