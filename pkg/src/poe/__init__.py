"""Proof-of-Execution BFT replication: replicas, clients, Linear variant, simulator and cost model."""

__version__ = "0.1.0"
