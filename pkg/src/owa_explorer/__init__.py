"""Spatial multi-criteria suitability analysis with ordered weighted
averaging, exhaustive decision-strategy space exploration and clustering of
the resulting suitability maps."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    NumericalError,
    OwaExplorerError,
)
from .grid import (  # noqa: F401
    CriterionStack,
    CriterionWeights,
    GridMeta,
    Raster,
    build_stack,
    parse_ascii_grid,
    write_ascii_grid,
)
from .strategy import (  # noqa: F401
    DecisionPoint,
    ExperimentalDesign,
    OrderWeights,
    TruncatedNormalSpec,
    discretize,
    empirical_risk,
    feasible,
    generate_weights,
    sample_design,
    solve_generating_distribution,
    truncnorm_moments,
)
from .owa import (  # noqa: F401
    PixelPermutationCache,
    SuitabilityMap,
    batch_compute,
    compute_map,
    owa_value,
    rank_pixels,
)
from .cluster import (  # noqa: F401
    ClusterSummary,
    DissimilarityMatrix,
    MergeTree,
    cluster_summaries,
    cut,
    export_segmentation,
    pairwise_euclidean,
    suggest_k,
    variance_ratio_curve,
    ward_linkage,
)
