"""Latent-class contextual anomaly detection.

Couples one-class hypersphere models per latent class with a CRF over a
dependency graph, estimated by alternating max-product inference and convex
parameter updates.  Scores are squared feature-space distances to the
assigned class center, and can be decomposed over raw input features.
"""

from lccad.core import (
    AUTO,
    ClusterModel,
    CrfWeights,
    DependencyGraph,
    FeatureMatrix,
    HyperParams,
    LatentAssignment,
    ValidationReport,
    validate_problem,
)
from lccad.data import (
    GridSpec,
    GroundTruth,
    ToySpec,
    chain_graph,
    gen_grid_facies,
    gen_toy,
    grid_graph,
    load_grid_csv,
)
from lccad.evaluation import MetricResult, aggregate, ari, auroc
from lccad.explain import ExplainContext, Relevance, outlierness, relevance, relevance_map
from lccad.features import FeatureMapper, IdentityMapper, median_bandwidth
from lccad.inference import (
    EdgePotentials,
    MessageState,
    NodePotentials,
    build_potentials,
    exact_map,
    joint_feature_map,
    lbp_backend,
    lbp_map,
    log_partition_brute,
)
from lccad.model import (
    FitReport,
    LccadModel,
    ObjectiveParts,
    fit,
    infer_states,
    load_model,
    objective,
    pseudolikelihood,
    resolve_gamma,
    save_model,
    score,
    update_centers,
    update_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AUTO",
    "ClusterModel",
    "CrfWeights",
    "DependencyGraph",
    "FeatureMatrix",
    "HyperParams",
    "LatentAssignment",
    "ValidationReport",
    "validate_problem",
    "GridSpec",
    "GroundTruth",
    "ToySpec",
    "chain_graph",
    "gen_grid_facies",
    "gen_toy",
    "grid_graph",
    "load_grid_csv",
    "MetricResult",
    "aggregate",
    "ari",
    "auroc",
    "ExplainContext",
    "Relevance",
    "outlierness",
    "relevance",
    "relevance_map",
    "FeatureMapper",
    "IdentityMapper",
    "median_bandwidth",
    "EdgePotentials",
    "MessageState",
    "NodePotentials",
    "build_potentials",
    "exact_map",
    "joint_feature_map",
    "lbp_backend",
    "lbp_map",
    "log_partition_brute",
    "FitReport",
    "LccadModel",
    "ObjectiveParts",
    "fit",
    "infer_states",
    "load_model",
    "objective",
    "pseudolikelihood",
    "resolve_gamma",
    "save_model",
    "score",
    "update_centers",
    "update_weights",
    "__version__",
]
