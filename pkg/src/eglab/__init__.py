"""Deterministic lock-step simulator for gossip-based distributed SGD.

A cluster of workers trains a shared MLP on partitioned data. Between
gradient steps the workers exchange parameters under one of several
communication protocols (all-reduce, elastic averaging against a center,
pull/push gossip, elastic gossip, full consensus), on a fixed period or
per-worker Bernoulli schedule. Everything is driven by explicitly derived
RNG streams so a run is a pure function of its config and seed.
"""

from . import data, metrics, nn, numeric, protocols, sim

__all__ = ["data", "metrics", "nn", "numeric", "protocols", "sim"]
__version__ = "0.1.0"
