"""Constant-query approximate 1-median selection in ultrametric spaces."""

from .errors import DomainError, FormatError, ParseError, UltramedianError
from .generators import GenSpec, generate, parse_spec
from .median import (
    ApproxParams,
    MedianReport,
    approx_median,
    approx_median_theorem,
    brute_force_median,
    cost,
    empirical_argmin,
    lemma_ratio_bound,
    order_by_distance_from,
    params_hk,
    sample_points,
)
from .metric import (
    DendrogramSpace,
    DistanceMatrixSpace,
    DistanceOracle,
    Verdict,
    dendrogram_to_matrix,
    isosceles_check,
    query,
    validate,
)

__version__ = "0.1.0"
