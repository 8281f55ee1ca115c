"""Mobility graphs from taxi trips: matching in graph space, interpolation and link prediction."""

from .errors import DataError, DimensionError, MobigraphError, NumericalError
from .graph_core import (
    InterpolationPath,
    MobilityGraph,
    Modality,
    Period,
    Permutation,
    graph_distance,
    interpolate,
    load_graph,
    permute_graph,
    save_graph,
    validate_graph,
)
from .matching import MatchConfig, MatchResult, brute_force_match, faq_match, pad_with_null_nodes

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DimensionError",
    "InterpolationPath",
    "MatchConfig",
    "MatchResult",
    "MobigraphError",
    "MobilityGraph",
    "Modality",
    "NumericalError",
    "Period",
    "Permutation",
    "brute_force_match",
    "faq_match",
    "graph_distance",
    "interpolate",
    "load_graph",
    "pad_with_null_nodes",
    "permute_graph",
    "save_graph",
    "validate_graph",
]
