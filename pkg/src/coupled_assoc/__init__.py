"""Spatially coupled neural associative memory: density evolution, recall and experiments."""
from .degree_dist import Convention, DistributionPair, EdgePolynomial, default_pair, load_pair
from .density_evolution import DEModel, energy_gap, thresholds
from .topology import GridSpec, build_topology

__all__ = ["Convention", "DistributionPair", "EdgePolynomial", "default_pair", "load_pair",
           "DEModel", "energy_gap", "thresholds", "GridSpec", "build_topology"]
