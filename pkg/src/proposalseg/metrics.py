"""Multi-instance segmentation metrics and proposal-recall evaluation.

Per frame, predicted and ground-truth instances are matched one-to-one
(optimal assignment by default) under a similarity kernel, and the
matched kernel total normalized by max(#gt, #pred) gives the frame's
multi-instance score (MI_DSC for the Dice kernel, MI_NSD for the surface
dice kernel).  Proposal quality is measured separately by recall over an
IoU grid and average recall (AR) at fixed proposal budgets, optionally
split by relative instance size.  Stage-level aggregation reports
worst-case oriented 5% quantiles alongside means.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .masks import (
    BinaryMask,
    FrameGeometry,
    coverage_at_least,
    dsc,
    iou,
    relative_area,
)
from .merging import Proposal
from .surface import _nsd_from_boundaries, boundary, distance_transform

DEFAULT_IOU_GRID: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
DEFAULT_AR_BUDGETS: tuple[int, ...] = (1, 10, 100)
DEFAULT_RECALL_BUDGET = 100

KERNELS = ("dsc", "iou", "nsd")
MATCHERS = ("optimal", "greedy")


class Stage(str, Enum):
    """Dataset split labels; the three test stages grow in difficulty."""

    TRAIN = "train"
    VAL = "val"
    TEST_STAGE_1 = "stage1"
    TEST_STAGE_2 = "stage2"
    TEST_STAGE_3 = "stage3"


class SizeBin(str, Enum):
    """Relative-size categories (instance area / frame area), left-closed."""

    XS = "XS"
    S = "S"
    M = "M"
    L = "L"
    XL = "XL"

    @property
    def bounds(self) -> tuple[float, float]:
        return _BIN_BOUNDS[self]

    @classmethod
    def from_fraction(cls, fraction: float) -> "SizeBin":
        if fraction < 0:
            raise ValueError(f"relative area must be >= 0, got {fraction}")
        for bin_ in cls:
            lo, hi = _BIN_BOUNDS[bin_]
            if lo <= fraction < hi:
                return bin_
        return cls.XL


_BIN_BOUNDS = {
    SizeBin.XS: (0.0, 0.01),
    SizeBin.S: (0.01, 0.02),
    SizeBin.M: (0.02, 0.05),
    SizeBin.L: (0.05, 0.10),
    SizeBin.XL: (0.10, math.inf),
}


def size_bin_of(instance: BinaryMask) -> SizeBin:
    """Size category of a nonempty instance by relative area."""
    if instance.is_empty:
        raise ValueError("size bin is undefined for an empty instance")
    return SizeBin.from_fraction(relative_area(instance))


@dataclass(frozen=True)
class FrameAnnotation:
    """Ground truth for one frame: pairwise-disjoint instance masks."""

    geometry: FrameGeometry
    instances: tuple[BinaryMask, ...]
    stage: Stage

    def __post_init__(self):
        instances = tuple(self.instances)
        for m in instances:
            if m.geometry != self.geometry:
                raise ValueError("annotation instance geometry differs from frame geometry")
            if m.is_empty:
                raise ValueError("annotation instances must be nonempty")
        if len(instances) > 1 and not coverage_at_least(instances, 2, self.geometry).is_empty:
            raise ValueError("annotation instances must be pairwise disjoint")
        object.__setattr__(self, "instances", instances)


# ---------------------------------------------------------------------------
# instance matching

@dataclass(frozen=True)
class MatchResult:
    """One-to-one instance correspondence for a frame.

    Every gt and prediction index appears exactly once, either in a pair
    or in one of the unmatched lists.  Pairs with kernel score 0 are
    reported unmatched.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]

    @property
    def total_score(self) -> float:
        return float(sum(score for _, _, score in self.pairs))


def iou_matrix(gts: Sequence[BinaryMask], preds: Sequence[BinaryMask]) -> np.ndarray:
    out = np.zeros((len(gts), len(preds)))
    for i, g in enumerate(gts):
        for j, p in enumerate(preds):
            out[i, j] = iou(g, p)
    return out


def dsc_matrix(gts: Sequence[BinaryMask], preds: Sequence[BinaryMask]) -> np.ndarray:
    out = np.zeros((len(gts), len(preds)))
    for i, g in enumerate(gts):
        for j, p in enumerate(preds):
            out[i, j] = dsc(g, p)
    return out


def nsd_matrix(
    gts: Sequence[BinaryMask], preds: Sequence[BinaryMask], tolerance: float
) -> np.ndarray:
    """Pairwise surface dice; boundaries and distance fields are shared
    across pairs instead of being recomputed per pair."""
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    g_bounds = [boundary(m) for m in gts]
    p_bounds = [boundary(m) for m in preds]
    g_fields = [distance_transform(b) if not b.is_empty else None for b in g_bounds]
    p_fields = [distance_transform(b) if not b.is_empty else None for b in p_bounds]
    out = np.zeros((len(gts), len(preds)))
    for i, g in enumerate(gts):
        for j, p in enumerate(preds):
            if g.is_empty and p.is_empty:
                out[i, j] = 1.0
            elif g.is_empty or p.is_empty:
                out[i, j] = 0.0
            else:
                out[i, j] = _nsd_from_boundaries(
                    p_bounds[j], p_fields[j], g_bounds[i], g_fields[i], tolerance
                )
    return out


def score_matrix(
    gts: Sequence[BinaryMask],
    preds: Sequence[BinaryMask],
    kernel: str,
    nsd_tolerance: float | None = None,
) -> np.ndarray:
    if kernel == "dsc":
        return dsc_matrix(gts, preds)
    if kernel == "iou":
        return iou_matrix(gts, preds)
    if kernel == "nsd":
        if nsd_tolerance is None:
            raise ValueError("the nsd kernel requires an explicit tolerance")
        return nsd_matrix(gts, preds, nsd_tolerance)
    raise ValueError(f"unknown kernel {kernel!r}, expected one of {KERNELS}")


def _greedy_assign(matrix: np.ndarray) -> list[tuple[int, int]]:
    """Highest-score-first one-to-one pairing; zero-score pairs are skipped.

    Ties resolve to the lower gt index, then the lower pred index.
    """
    n_gt, n_pred = matrix.shape
    if n_gt == 0 or n_pred == 0:
        return []
    order = np.argsort(-matrix, axis=None, kind="stable")
    gt_used = np.zeros(n_gt, dtype=bool)
    pred_used = np.zeros(n_pred, dtype=bool)
    pairs = []
    for flat in order:
        i, j = divmod(int(flat), n_pred)
        if matrix[i, j] <= 0.0:
            break
        if gt_used[i] or pred_used[j]:
            continue
        gt_used[i] = True
        pred_used[j] = True
        pairs.append((i, j))
    return pairs


def match_instances(
    gt: Sequence[BinaryMask],
    pred: Sequence[BinaryMask],
    kernel: str = "dsc",
    nsd_tolerance: float | None = None,
    method: str = "optimal",
) -> MatchResult:
    """Match gt and predicted instances one-to-one under a kernel.

    "optimal" maximizes the total kernel score over all assignments;
    "greedy" pairs highest scores first and is provided for
    cross-checking.  Pairs whose kernel score is 0 count as unmatched.
    """
    if method not in MATCHERS:
        raise ValueError(f"unknown matcher {method!r}, expected one of {MATCHERS}")
    matrix = score_matrix(gt, pred, kernel, nsd_tolerance)
    if method == "optimal" and matrix.size:
        rows, cols = linear_sum_assignment(matrix, maximize=True)
        assigned = [(int(i), int(j)) for i, j in zip(rows, cols) if matrix[i, j] > 0.0]
    else:
        assigned = _greedy_assign(matrix)
    assigned.sort()
    pairs = tuple((i, j, float(matrix[i, j])) for i, j in assigned)
    paired_gt = {i for i, _ in assigned}
    paired_pred = {j for _, j in assigned}
    return MatchResult(
        pairs=pairs,
        unmatched_gt=tuple(i for i in range(len(gt)) if i not in paired_gt),
        unmatched_pred=tuple(j for j in range(len(pred)) if j not in paired_pred),
    )


def mi_score_frame(
    gt: Sequence[BinaryMask],
    pred: Sequence[BinaryMask],
    kernel: str = "dsc",
    nsd_tolerance: float | None = None,
    method: str = "optimal",
) -> float:
    """Multi-instance frame score: matched kernel total / max(#gt, #pred).

    A frame with no gt and no predicted instances scores 1.0; unmatched
    instances on either side pull the score down through the denominator.
    """
    denom = max(len(gt), len(pred))
    if denom == 0:
        return 1.0
    result = match_instances(gt, pred, kernel, nsd_tolerance, method)
    return result.total_score / denom


def oracle_select(
    gt: Sequence[BinaryMask], proposals: Sequence[Proposal]
) -> list[tuple[int, int]]:
    """Pick, per gt instance, the proposal with maximum IoU.

    Ties break to the higher objectness score, then the lower proposal
    index.  The same proposal may serve several gt instances.  With no
    proposals at all, every gt stays unpaired and the list is empty.
    """
    if not proposals:
        return []
    selected = []
    for i, g in enumerate(gt):
        best_j = 0
        best_key = (-1.0, -1.0)
        for j, p in enumerate(proposals):
            key = (iou(g, p.mask), p.score)
            if key > best_key:
                best_key = key
                best_j = j
        selected.append((i, best_j))
    return selected


# ---------------------------------------------------------------------------
# proposal recall

def greedy_matched_ious(
    gt: Sequence[BinaryMask], ranked: Sequence[BinaryMask], budget: int
) -> np.ndarray:
    """Matched IoU per gt instance against the top-`budget` ranked masks.

    Matching is greedy by descending IoU, one-to-one; unmatched gt get
    0.0.  The input order of `ranked` is the ranking.
    """
    if budget < 1:
        raise ValueError("proposal budget must be >= 1")
    matched = np.zeros(len(gt))
    if not gt or not ranked:
        return matched
    matrix = iou_matrix(gt, ranked[:budget])
    for i, j in _greedy_assign(matrix):
        matched[i] = matrix[i, j]
    return matched


def _pooled_matched_ious(
    gt_all: Sequence[FrameAnnotation],
    proposals_per_frame: Sequence[Sequence[Proposal]],
    n: int,
) -> np.ndarray:
    if len(gt_all) != len(proposals_per_frame):
        raise ValueError("annotations and proposal lists must be parallel sequences")
    per_frame = []
    for ann, props in zip(gt_all, proposals_per_frame):
        per_frame.append(greedy_matched_ious(ann.instances, [p.mask for p in props], n))
    if not per_frame:
        return np.zeros(0)
    return np.concatenate(per_frame)


def recall_at(
    gt_all: Sequence[FrameAnnotation],
    proposals_per_frame: Sequence[Sequence[Proposal]],
    n: int,
    iou_threshold: float,
) -> float:
    """Fraction of gt instances matched at IoU >= threshold by top-n proposals.

    Instances pool across frames.  A frame set with no gt instances at
    all scores 1.0 (vacuously: every one of zero instances is found).
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    matched = _pooled_matched_ious(gt_all, proposals_per_frame, n)
    if matched.size == 0:
        return 1.0
    return float((matched >= iou_threshold).mean())


def average_recall(
    gt_all: Sequence[FrameAnnotation],
    proposals_per_frame: Sequence[Sequence[Proposal]],
    n: int,
    iou_grid: Sequence[float] = DEFAULT_IOU_GRID,
) -> float:
    """Mean recall over the IoU grid (default 0.50 to 0.95 in steps of 0.05)."""
    matched = _pooled_matched_ious(gt_all, proposals_per_frame, n)
    if matched.size == 0:
        return 1.0
    return float(np.mean([(matched >= t).mean() for t in iou_grid]))


def recall_curves_by_size(
    gt_all: Sequence[FrameAnnotation],
    proposals_per_frame: Sequence[Sequence[Proposal]],
    n: int,
    iou_grid: Sequence[float] = DEFAULT_IOU_GRID,
) -> dict[SizeBin, tuple[tuple[float, float], ...]]:
    """Recall vs IoU threshold, split by gt relative-size bin.

    Matching stays global per frame (proposals are shared between
    instances); only the counting is restricted to each bin.  Bins with
    no gt instances are absent from the result, not reported as 0.
    """
    if not iou_grid or any(b <= a for a, b in zip(iou_grid, iou_grid[1:])):
        raise ValueError("iou_grid must be nonempty and strictly ascending")
    matched = _pooled_matched_ious(gt_all, proposals_per_frame, n)
    bins = np.array(
        [size_bin_of(m).value for ann in gt_all for m in ann.instances], dtype=object
    )
    curves = {}
    for bin_ in SizeBin:
        sel = matched[bins == bin_.value] if matched.size else matched
        if sel.size == 0:
            continue
        curves[bin_] = tuple((float(t), float((sel >= t).mean())) for t in iou_grid)
    return curves


def quantile_05(values: Sequence[float]) -> float:
    """5% quantile by linear interpolation between order statistics."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("quantile of an empty list is undefined")
    return float(np.quantile(arr, 0.05))


# ---------------------------------------------------------------------------
# dataset-level evaluation

@dataclass(frozen=True)
class EvalConfig:
    """Evaluation knobs; NSD needs an explicit pixel tolerance."""

    nsd_tolerance: float | None = None
    compute_nsd: bool = True
    ar_budgets: tuple[int, ...] = DEFAULT_AR_BUDGETS
    iou_grid: tuple[float, ...] = DEFAULT_IOU_GRID
    recall_budget: int = DEFAULT_RECALL_BUDGET
    matcher: str = "optimal"

    def __post_init__(self):
        if self.compute_nsd and self.nsd_tolerance is None:
            raise ValueError(
                "a surface-dice tolerance is required to compute MI_NSD; "
                "set nsd_tolerance or disable NSD"
            )
        if self.nsd_tolerance is not None and self.nsd_tolerance < 0:
            raise ValueError("nsd_tolerance must be >= 0")
        if self.matcher not in MATCHERS:
            raise ValueError(f"unknown matcher {self.matcher!r}")
        if not self.ar_budgets or any(b < 1 for b in self.ar_budgets):
            raise ValueError("ar_budgets must be nonempty positive integers")
        if self.recall_budget < 1:
            raise ValueError("recall_budget must be >= 1")
        object.__setattr__(self, "ar_budgets", tuple(int(b) for b in self.ar_budgets))
        object.__setattr__(self, "iou_grid", tuple(float(t) for t in self.iou_grid))


@dataclass(frozen=True)
class EvalFrame:
    """One frame to score: its annotation plus ranked predicted instances."""

    frame_id: str
    annotation: FrameAnnotation
    predictions: tuple[Proposal, ...]


@dataclass(frozen=True)
class FrameScore:
    frame_id: str
    stage: Stage
    mi_dsc: float
    mi_nsd: float | None


@dataclass(frozen=True)
class StageSummary:
    stage: Stage
    frame_count: int
    q05_mi_dsc: float
    mean_mi_dsc: float
    q05_mi_nsd: float | None
    mean_mi_nsd: float | None
    average_recall: dict[int, float]
    recall_by_size: dict[SizeBin, tuple[tuple[float, float], ...]]


@dataclass(frozen=True)
class MetricReport:
    per_frame: tuple[FrameScore, ...]
    per_stage: dict[Stage, StageSummary]


@dataclass(frozen=True)
class _FrameEval:
    frame_id: str
    stage: Stage
    mi_dsc: float
    mi_nsd: float | None
    gt_bins: tuple[str, ...]
    matched_iou: dict[int, tuple[float, ...]]  # budget -> per-gt matched IoU


def _eval_budgets(config: EvalConfig) -> list[int]:
    return sorted(set(config.ar_budgets) | {config.recall_budget})


def score_frame(frame: EvalFrame, config: EvalConfig) -> _FrameEval:
    """Pure per-frame evaluation; frames can be scored in any order or in
    parallel without affecting results."""
    gt = frame.annotation.instances
    pred_masks = [p.mask for p in frame.predictions]
    mi_dsc = mi_score_frame(gt, pred_masks, "dsc", method=config.matcher)
    mi_nsd = None
    if config.compute_nsd:
        mi_nsd = mi_score_frame(
            gt, pred_masks, "nsd", nsd_tolerance=config.nsd_tolerance, method=config.matcher
        )
    budgets = _eval_budgets(config)
    matched: dict[int, tuple[float, ...]] = {}
    if gt and pred_masks:
        matrix = iou_matrix(gt, pred_masks[: max(budgets)])
        for n in budgets:
            sub = matrix[:, :n]
            row = np.zeros(len(gt))
            for i, j in _greedy_assign(sub):
                row[i] = sub[i, j]
            matched[n] = tuple(float(v) for v in row)
    else:
        matched = {n: tuple(0.0 for _ in gt) for n in budgets}
    return _FrameEval(
        frame_id=frame.frame_id,
        stage=frame.annotation.stage,
        mi_dsc=mi_dsc,
        mi_nsd=mi_nsd,
        gt_bins=tuple(size_bin_of(m).value for m in gt),
        matched_iou=matched,
    )


def _score_task(args: tuple[EvalFrame, EvalConfig]) -> _FrameEval:
    return score_frame(*args)


def aggregate_stage(frame_evals: Sequence[_FrameEval], config: EvalConfig) -> StageSummary:
    """Collapse one stage's frame evaluations into its report row.

    Aggregation runs in the given frame order, so results are
    bit-identical however the per-frame work was scheduled.
    """
    if not frame_evals:
        raise ValueError("cannot aggregate an empty stage")
    stage = frame_evals[0].stage
    mi_dsc = [e.mi_dsc for e in frame_evals]
    has_nsd = frame_evals[0].mi_nsd is not None
    mi_nsd = [e.mi_nsd for e in frame_evals] if has_nsd else None
    bins = np.array(
        [b for e in frame_evals for b in e.gt_bins], dtype=object
    )

    def pooled(n: int) -> np.ndarray:
        return np.array([v for e in frame_evals for v in e.matched_iou[n]])

    ar = {}
    for n in config.ar_budgets:
        m = pooled(n)
        ar[n] = 1.0 if m.size == 0 else float(np.mean([(m >= t).mean() for t in config.iou_grid]))
    curves: dict[SizeBin, tuple[tuple[float, float], ...]] = {}
    m_budget = pooled(config.recall_budget)
    for bin_ in SizeBin:
        sel = m_budget[bins == bin_.value] if m_budget.size else m_budget
        if sel.size == 0:
            continue
        curves[bin_] = tuple((float(t), float((sel >= t).mean())) for t in config.iou_grid)
    return StageSummary(
        stage=stage,
        frame_count=len(frame_evals),
        q05_mi_dsc=quantile_05(mi_dsc),
        mean_mi_dsc=float(np.mean(mi_dsc)),
        q05_mi_nsd=quantile_05(mi_nsd) if has_nsd else None,
        mean_mi_nsd=float(np.mean(mi_nsd)) if has_nsd else None,
        average_recall=ar,
        recall_by_size=curves,
    )


def evaluate_frames(
    frames: Sequence[EvalFrame], config: EvalConfig, workers: int = 1
) -> MetricReport:
    """Score every frame and aggregate per stage.

    `workers` is a throughput hint only: per-frame scoring is pure and
    results are collected in input order, so the report is identical for
    any worker count.
    """
    if workers > 1 and len(frames) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(frames) // (workers * 4))
            evals = list(
                pool.map(_score_task, [(f, config) for f in frames], chunksize=chunk)
            )
    else:
        evals = [score_frame(f, config) for f in frames]
    per_frame = tuple(
        FrameScore(e.frame_id, e.stage, e.mi_dsc, e.mi_nsd) for e in evals
    )
    per_stage = {}
    for stage in Stage:
        stage_evals = [e for e in evals if e.stage == stage]
        if stage_evals:
            per_stage[stage] = aggregate_stage(stage_evals, config)
    return MetricReport(per_frame=per_frame, per_stage=per_stage)
