"""Weighted fusion of segmentation ensembles with optional pairwise side information."""

from .core import (
    ConstraintSet,
    ContingencyTable,
    DimensionMismatch,
    Ensemble,
    InconsistentConstraints,
    Segmentation,
    SoftConnectivity,
    close_constraints,
    contingency,
)
from .dataio import (
    DatasetSplit,
    FormatError,
    constraints_from_ground_truth,
    generate_synthetic,
    read_constraints,
    read_image,
    read_label_map,
    read_pgm,
    split_mask,
    split_rows,
    write_constraints,
    write_image,
    write_label_map,
    write_pgm,
)
from .fusion import SSSF, USF, FusionConfig, FusionResult, bok_init, fuse_sssf, fuse_usf, move_delta
from .metrics import (
    PairCounts,
    adjusted_mutual_information,
    adjusted_rand_index,
    bregman_connectivity_distance,
    evaluate,
    pair_counts,
    rand_index,
    sdd,
)
from .segmenters import MultiBandImage, band_ensemble, kmeans, kmeans_segment
from .weights import NonConvergenceWarning, SolverConfig, WeightSolution, simplex_project, solve_l1, solve_quadratic

__version__ = "0.1.0"
