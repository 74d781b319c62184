"""Heterogeneous intrinsic dimension estimation with a Bayesian mixture of Pareto laws."""

__version__ = "0.1.0"

from .estimator import Hidalgo, TwoNN
from .model import MixtureParams, PriorSpec
from .neighbors import AdjacencyMatrix, Dataset, DuplicatePointsError, NeighborGraph, build_adjacency, build_knn_graph, compute_mu
from .posterior import coclustering_matrix, per_observation_id, point_partition, select_K
from .sampler import PosteriorTrace, SamplerConfig, run_chain

__all__ = [
    "AdjacencyMatrix", "Dataset", "DuplicatePointsError", "Hidalgo", "MixtureParams", "NeighborGraph",
    "PosteriorTrace", "PriorSpec", "SamplerConfig", "TwoNN", "build_adjacency", "build_knn_graph",
    "coclustering_matrix", "compute_mu", "per_observation_id", "point_partition", "run_chain", "select_K",
]
