"""Latency-minimal federated learning over multi-hop relay networks."""

__version__ = "0.1.0"
