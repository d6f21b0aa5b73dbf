"""Instance segmentation from ranked object proposals.

Turns overlapping mask proposals into final instrument instances
(score filter -> overlap grouping -> pixel vote) and scores the result
with multi-instance dice / surface-dice and proposal-recall metrics.
"""

from .masks import (
    BinaryMask,
    FrameGeometry,
    GeometryMismatchError,
    coverage_at_least,
    decode,
    dsc,
    encode,
    intersection_area,
    iou,
    union_area,
)
from .merging import MergeConfig, Proposal, ProposalGroup, run_pipeline
from .metrics import (
    EvalConfig,
    EvalFrame,
    FrameAnnotation,
    MatchResult,
    MetricReport,
    SizeBin,
    Stage,
    StageSummary,
    average_recall,
    evaluate_frames,
    match_instances,
    mi_score_frame,
    oracle_select,
    quantile_05,
    recall_at,
    recall_curves_by_size,
    size_bin_of,
)
from .surface import BoundarySet, DistanceField, boundary, distance_transform, surface_dice
from .synthetic import SynthConfig, degrade_ranking, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "BoundarySet",
    "DistanceField",
    "EvalConfig",
    "EvalFrame",
    "FrameAnnotation",
    "FrameGeometry",
    "GeometryMismatchError",
    "MatchResult",
    "MergeConfig",
    "MetricReport",
    "Proposal",
    "ProposalGroup",
    "SizeBin",
    "Stage",
    "StageSummary",
    "SynthConfig",
    "average_recall",
    "boundary",
    "coverage_at_least",
    "decode",
    "degrade_ranking",
    "distance_transform",
    "dsc",
    "encode",
    "evaluate_frames",
    "generate_dataset",
    "intersection_area",
    "iou",
    "match_instances",
    "mi_score_frame",
    "oracle_select",
    "quantile_05",
    "recall_at",
    "recall_curves_by_size",
    "run_pipeline",
    "size_bin_of",
    "surface_dice",
    "union_area",
    "__version__",
]
