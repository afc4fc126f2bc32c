"""Doubly robust difference-in-differences on networks with double negative
controls, GNN confounding bridges fit by two-step GMM, and network HAC
inference."""

from .dgp import PanelDataset, SimConfig, neighbor_mean, oracle_adt, simulate
from .errors import EstimationError, NumericError, SchemaError
from .estimator import (
    DoublyRobustDid,
    EstimateReport,
    MonteCarloSummary,
    SpilloverOls,
    estimate_adt,
    estimate_adt_dr,
    estimate_ait,
    estimate_ait_dr,
    hac_variance,
    infer,
    monte_carlo,
    ols_baseline,
)
from .exposure import ExposureSpec, ExposureVector, compute_exposure, parse_exposure
from .graph import (
    INF,
    DistanceMatrix,
    InterferenceGraph,
    NetworkGraph,
    bfs_distances,
    erdos_renyi,
    graph_stats,
    hac_bandwidth,
    interference_sets,
)
from .io import derive_negative_controls, read_edgelist, read_panel, write_edgelist, write_panel

__version__ = "0.1.0"

__all__ = [
    "DistanceMatrix",
    "DoublyRobustDid",
    "EstimateReport",
    "EstimationError",
    "ExposureSpec",
    "ExposureVector",
    "INF",
    "InterferenceGraph",
    "MonteCarloSummary",
    "NetworkGraph",
    "NumericError",
    "PanelDataset",
    "SchemaError",
    "SimConfig",
    "SpilloverOls",
    "bfs_distances",
    "compute_exposure",
    "derive_negative_controls",
    "erdos_renyi",
    "estimate_adt",
    "estimate_adt_dr",
    "estimate_ait",
    "estimate_ait_dr",
    "graph_stats",
    "hac_bandwidth",
    "hac_variance",
    "infer",
    "interference_sets",
    "monte_carlo",
    "neighbor_mean",
    "ols_baseline",
    "oracle_adt",
    "parse_exposure",
    "read_edgelist",
    "read_panel",
    "simulate",
    "write_edgelist",
    "write_panel",
]
