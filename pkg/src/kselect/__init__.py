"""Choosing the number of clusters in high-dimension, low-sample-size binary
marker data by bootstrapping three clustering methods and comparing Hubert's
gamma across cluster counts."""
__version__ = "0.1.0"

from .engines import (ClusterAssignment, Dendrogram, EngineError, GmmFit, cut_tree, gmm_em,
                      hclust, hclust_complete, kmeans)
from .mdata import (BootstrapSample, CondensedDistances, MarkerMatrix, MarkerParseError,
                    MarkerValidationError, bootstrap_rows, impute_mean, load_markers,
                    manhattan_distances, write_markers)
from .popsim import LabeledDataset, SimConfig, calibrate_separation, preset_separation, simulate_markers
from .reduce import ScoreMatrix, pca_scores
from .selector import (CLUSTERED, INCONCLUSIVE, NO_STRUCTURE, GammaTable, SelectionConfig,
                       SelectionReport, diagnose_structure, paired_signflip_test, run_grid, select,
                       select_k)
from .validity import GammaValue, hubert_gamma, true_gamma

__all__ = [
    "BootstrapSample", "CLUSTERED", "ClusterAssignment", "CondensedDistances", "Dendrogram",
    "EngineError", "GammaTable", "GammaValue", "GmmFit", "INCONCLUSIVE", "LabeledDataset",
    "MarkerMatrix", "MarkerParseError", "MarkerValidationError", "NO_STRUCTURE", "ScoreMatrix",
    "SelectionConfig", "SelectionReport", "SimConfig", "bootstrap_rows", "calibrate_separation",
    "cut_tree", "diagnose_structure", "gmm_em", "hclust", "hclust_complete", "hubert_gamma",
    "impute_mean", "kmeans", "load_markers", "manhattan_distances", "paired_signflip_test",
    "pca_scores", "preset_separation", "run_grid", "select", "select_k", "simulate_markers",
    "true_gamma", "write_markers",
]
