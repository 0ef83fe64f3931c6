"""Dual-channel anomaly detection for knowledge-graph triples."""

__version__ = "0.1.0"
