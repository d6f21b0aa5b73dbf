"""Instance matching, multi-instance scores, recall curves, aggregation."""

import math
from itertools import permutations

import numpy as np
import pytest

from proposalseg.masks import BinaryMask, FrameGeometry, dsc, encode, iou
from proposalseg.merging import Proposal
from proposalseg.metrics import (
    DEFAULT_IOU_GRID,
    EvalConfig,
    EvalFrame,
    FrameAnnotation,
    SizeBin,
    Stage,
    average_recall,
    dsc_matrix,
    evaluate_frames,
    greedy_matched_ious,
    iou_matrix,
    match_instances,
    mi_score_frame,
    nsd_matrix,
    oracle_select,
    quantile_05,
    recall_at,
    recall_curves_by_size,
    size_bin_of,
)
from proposalseg.surface import surface_dice

G = FrameGeometry(10, 10)


def mask(runs, geometry=G):
    return BinaryMask.from_runs(geometry, runs)


def random_masks(rng, geometry, n, density_range=(0.1, 0.5)):
    out = []
    for _ in range(n):
        grid = rng.random(geometry.shape) < rng.uniform(*density_range)
        if not grid.any():
            grid[0, 0] = True
        out.append(encode(grid, geometry))
    return out


def permutation_best_total(matrix):
    """Exhaustive assignment maximum; tractable for tiny matrices."""
    n_gt, n_pred = matrix.shape
    if n_gt == 0 or n_pred == 0:
        return 0.0
    best = 0.0
    if n_gt <= n_pred:
        for perm in permutations(range(n_pred), n_gt):
            best = max(best, math.fsum(matrix[i, j] for i, j in enumerate(perm)))
    else:
        for perm in permutations(range(n_gt), n_pred):
            best = max(best, math.fsum(matrix[perm[j], j] for j in range(n_pred)))
    return best


# ---------------------------------------------------------------------------
# size bins

def test_size_bin_boundaries_left_closed():
    assert SizeBin.from_fraction(0.0) is SizeBin.XS
    assert SizeBin.from_fraction(0.0099) is SizeBin.XS
    assert SizeBin.from_fraction(0.01) is SizeBin.S  # exactly 1% is already S
    assert SizeBin.from_fraction(0.0199) is SizeBin.S
    assert SizeBin.from_fraction(0.02) is SizeBin.M
    assert SizeBin.from_fraction(0.049) is SizeBin.M
    assert SizeBin.from_fraction(0.05) is SizeBin.L
    assert SizeBin.from_fraction(0.099) is SizeBin.L
    assert SizeBin.from_fraction(0.10) is SizeBin.XL
    assert SizeBin.from_fraction(1.0) is SizeBin.XL


def test_size_bin_of_masks():
    assert size_bin_of(mask([(0, 1)])) is SizeBin.S  # 1 of 100 pixels
    assert size_bin_of(mask([(0, 3)])) is SizeBin.M
    assert size_bin_of(mask([(0, 10)])) is SizeBin.XL
    with pytest.raises(ValueError):
        size_bin_of(BinaryMask.empty(G))


# ---------------------------------------------------------------------------
# annotations

def test_annotation_rejects_overlap_and_empties():
    with pytest.raises(ValueError):
        FrameAnnotation(G, (mask([(0, 4)]), mask([(2, 4)])), Stage.TEST_STAGE_1)
    with pytest.raises(ValueError):
        FrameAnnotation(G, (BinaryMask.empty(G),), Stage.TEST_STAGE_1)
    ann = FrameAnnotation(G, (mask([(0, 4)]), mask([(10, 4)])), Stage.TEST_STAGE_1)
    assert len(ann.instances) == 2


# ---------------------------------------------------------------------------
# matching

def test_two_gt_one_perfect_prediction_scores_half():
    gt = [mask([(0, 4)]), mask([(20, 4)])]
    assert mi_score_frame(gt, [gt[0]], "dsc") == 0.5
    assert mi_score_frame(gt, [gt[0]], "iou") == 0.5


def test_empty_frame_conventions():
    assert mi_score_frame([], [], "dsc") == 1.0
    assert mi_score_frame([mask([(0, 4)])], [], "dsc") == 0.0
    assert mi_score_frame([], [mask([(0, 4)])], "dsc") == 0.0


def test_zero_score_pairs_stay_unmatched():
    gt = [mask([(0, 2)])]
    pred = [mask([(50, 2)])]  # disjoint
    result = match_instances(gt, pred)
    assert result.pairs == ()
    assert result.unmatched_gt == (0,)
    assert result.unmatched_pred == (0,)


def test_match_result_partitions_indices():
    rng = np.random.default_rng(41)
    for method in ("optimal", "greedy"):
        for _ in range(40):
            gt = random_masks(rng, G, int(rng.integers(0, 5)))
            pred = random_masks(rng, G, int(rng.integers(0, 5)))
            r = match_instances(gt, pred, method=method)
            gt_seen = sorted([i for i, _, _ in r.pairs] + list(r.unmatched_gt))
            pred_seen = sorted([j for _, j, _ in r.pairs] + list(r.unmatched_pred))
            assert gt_seen == list(range(len(gt)))
            assert pred_seen == list(range(len(pred)))
            for i, j, s in r.pairs:
                assert s > 0.0
                assert s == pytest.approx(dsc(gt[i], pred[j]))


def test_optimal_matches_permutation_oracle():
    rng = np.random.default_rng(42)
    for _ in range(60):
        gt = random_masks(rng, G, int(rng.integers(1, 5)))
        pred = random_masks(rng, G, int(rng.integers(1, 5)))
        want = permutation_best_total(dsc_matrix(gt, pred))
        got = match_instances(gt, pred, "dsc").total_score
        assert got == pytest.approx(want, abs=1e-12)


def test_greedy_never_beats_optimal():
    rng = np.random.default_rng(43)
    for _ in range(60):
        gt = random_masks(rng, G, int(rng.integers(1, 6)))
        pred = random_masks(rng, G, int(rng.integers(1, 6)))
        greedy = match_instances(gt, pred, method="greedy").total_score
        optimal = match_instances(gt, pred, method="optimal").total_score
        assert greedy <= optimal + 1e-12


def test_nsd_matrix_matches_pairwise_surface_dice():
    rng = np.random.default_rng(44)
    gt = random_masks(rng, G, 3)
    pred = random_masks(rng, G, 4)
    got = nsd_matrix(gt, pred, 2.0)
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            assert got[i, j] == pytest.approx(surface_dice(p, g, 2.0), abs=1e-12)


def test_mi_nsd_requires_tolerance():
    gt = [mask([(0, 4)])]
    with pytest.raises(ValueError):
        mi_score_frame(gt, gt, "nsd")
    assert mi_score_frame(gt, gt, "nsd", nsd_tolerance=1.0) == 1.0


# ---------------------------------------------------------------------------
# oracle selection

def test_oracle_select_picks_best_iou():
    gt = [mask([(0, 4)]), mask([(20, 4)])]
    proposals = [
        Proposal(mask([(0, 3)]), 0.2),   # iou 3/4 with gt0
        Proposal(mask([(0, 4)]), 0.1),   # iou 1 with gt0
        Proposal(mask([(20, 2)]), 0.9),  # iou 1/2 with gt1
    ]
    assert oracle_select(gt, proposals) == [(0, 1), (1, 2)]


def test_oracle_select_tie_breaks():
    gt = [mask([(0, 4)])]
    tied = [Proposal(mask([(0, 2)]), 0.3), Proposal(mask([(2, 2)]), 0.7)]
    # equal IoU 1/2: the higher score wins
    assert oracle_select(gt, tied) == [(0, 1)]
    tied_scores = [Proposal(mask([(0, 2)]), 0.5), Proposal(mask([(2, 2)]), 0.5)]
    # equal IoU and score: the earlier proposal wins
    assert oracle_select(gt, tied_scores) == [(0, 0)]


def test_oracle_select_may_reuse_one_proposal():
    gt = [mask([(0, 4)]), mask([(10, 4)])]
    shared = [Proposal(mask([(0, 14)]), 0.5)]
    assert oracle_select(gt, shared) == [(0, 0), (1, 0)]
    assert oracle_select(gt, []) == []


# ---------------------------------------------------------------------------
# proposal recall

def annotation_of(masks_, stage=Stage.TEST_STAGE_1, geometry=G):
    return FrameAnnotation(geometry, tuple(masks_), stage)


def test_recall_threshold_and_budget():
    gt = annotation_of([mask([(0, 5)])])
    near = Proposal(mask([(0, 3)]), 0.9)  # iou 0.6
    far = Proposal(mask([(50, 5)]), 0.95)
    frames = [gt], [[near]]
    assert recall_at(*frames, n=1, iou_threshold=0.5) == 1.0
    assert recall_at(*frames, n=1, iou_threshold=0.65) == 0.0
    # the good proposal ranks second: budget 1 misses it
    frames2 = [gt], [[far, near]]
    assert recall_at(*frames2, n=1, iou_threshold=0.5) == 0.0
    assert recall_at(*frames2, n=2, iou_threshold=0.5) == 1.0
    with pytest.raises(ValueError):
        recall_at(*frames, n=0, iou_threshold=0.5)
    with pytest.raises(ValueError):
        recall_at(*frames, n=1, iou_threshold=0.0)


def test_recall_pools_instances_across_frames():
    a = annotation_of([mask([(0, 5)]), mask([(20, 5)])])
    b = annotation_of([mask([(40, 5)])])
    props = [[Proposal(a.instances[0], 0.9)], [Proposal(b.instances[0], 0.9)]]
    # 2 of 3 pooled instances found, not the mean of per-frame recalls
    assert recall_at([a, b], props, n=10, iou_threshold=0.9) == pytest.approx(2 / 3)


def test_recall_vacuous_without_gt():
    assert recall_at([], [], n=5, iou_threshold=0.5) == 1.0
    assert average_recall([], [], n=5) == 1.0


def test_average_recall_is_mean_over_grid():
    rng = np.random.default_rng(45)
    anns, props = [], []
    for _ in range(6):
        gts = random_masks(rng, G, 2, density_range=(0.05, 0.2))
        # overlap between random gts is possible; rebuild as disjoint rows
        row = int(rng.integers(0, 9))
        gts = [mask([(row * 10, 4)]), mask([((row + 1) * 10 + 5, 4)])]
        anns.append(annotation_of(gts))
        props.append([Proposal(m, 0.9) for m in random_masks(rng, G, 8)])
    ar = average_recall(anns, props, n=4)
    recalls = [recall_at(anns, props, n=4, iou_threshold=t) for t in DEFAULT_IOU_GRID]
    assert len(DEFAULT_IOU_GRID) == 10
    assert ar == pytest.approx(float(np.mean(recalls)), abs=1e-12)


def test_greedy_matched_ious_prefers_best_pairs():
    gt = [mask([(0, 4)]), mask([(10, 4)])]
    ranked = [mask([(0, 4), (10, 4)]), mask([(10, 4)])]
    matched = greedy_matched_ious(gt, ranked, budget=10)
    # the combined mask pairs with gt0 (iou 1/2), the exact mask with gt1
    assert matched[0] == pytest.approx(0.5)
    assert matched[1] == pytest.approx(1.0)


def test_recall_curves_split_by_size():
    # S instance (1 px of 100) and XL instance (20 px of 100)
    small, large = mask([(0, 1)]), mask([(50, 20)])
    ann = annotation_of([small, large])
    props = [[Proposal(large, 0.9)]]
    curves = recall_curves_by_size([ann], props, n=5)
    assert set(curves) == {SizeBin.S, SizeBin.XL}
    assert all(r == 0.0 for _, r in curves[SizeBin.S])
    assert all(r == 1.0 for _, r in curves[SizeBin.XL])
    assert [t for t, _ in curves[SizeBin.S]] == list(DEFAULT_IOU_GRID)
    with pytest.raises(ValueError):
        recall_curves_by_size([ann], props, n=5, iou_grid=())
    with pytest.raises(ValueError):
        recall_curves_by_size([ann], props, n=5, iou_grid=(0.5, 0.5))


# ---------------------------------------------------------------------------
# quantile

def test_quantile_interpolates():
    assert quantile_05([0.0, 1.0]) == pytest.approx(0.05)
    assert quantile_05([0.7]) == 0.7
    assert quantile_05([0.3] * 50) == 0.3
    with pytest.raises(ValueError):
        quantile_05([])


def test_quantile_bounds_and_permutation_invariance():
    rng = np.random.default_rng(46)
    for _ in range(50):
        values = rng.uniform(0, 1, size=int(rng.integers(1, 40)))
        q = quantile_05(values)
        assert values.min() <= q <= values.max()
        assert q <= float(np.median(values)) + 1e-12
        assert quantile_05(list(rng.permutation(values))) == pytest.approx(q, abs=1e-15)


# ---------------------------------------------------------------------------
# dataset evaluation

def make_frames():
    g = FrameGeometry(20, 10)
    rows = lambda r, n: BinaryMask.from_runs(g, [(r * 20, n)])
    frames = []
    for k, stage in enumerate((Stage.TEST_STAGE_1, Stage.TEST_STAGE_1, Stage.TEST_STAGE_2)):
        gts = (rows(2 * k, 6), rows(2 * k + 3, 20))
        ann = FrameAnnotation(g, gts, stage)
        preds = tuple(Proposal(m, 0.9) for m in gts)
        frames.append(EvalFrame(f"f{k}", ann, preds))
    return frames


def test_perfect_predictions_score_one_everywhere():
    report = evaluate_frames(make_frames(), EvalConfig(nsd_tolerance=1.0))
    assert [f.mi_dsc for f in report.per_frame] == [1.0, 1.0, 1.0]
    assert [f.mi_nsd for f in report.per_frame] == [1.0, 1.0, 1.0]
    assert set(report.per_stage) == {Stage.TEST_STAGE_1, Stage.TEST_STAGE_2}
    s1 = report.per_stage[Stage.TEST_STAGE_1]
    assert s1.frame_count == 2
    assert s1.mean_mi_dsc == 1.0 and s1.q05_mi_dsc == 1.0
    assert s1.average_recall == {1: pytest.approx(0.5), 10: 1.0, 100: 1.0}
    for curve in s1.recall_by_size.values():
        assert all(r == 1.0 for _, r in curve)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig()  # nsd on by default, tolerance missing
    with pytest.raises(ValueError):
        EvalConfig(nsd_tolerance=-1.0)
    with pytest.raises(ValueError):
        EvalConfig(compute_nsd=False, matcher="unknown")
    with pytest.raises(ValueError):
        EvalConfig(compute_nsd=False, ar_budgets=())
    cfg = EvalConfig(compute_nsd=False)
    assert cfg.ar_budgets == (1, 10, 100) and cfg.recall_budget == 100


def test_nsd_can_be_skipped():
    report = evaluate_frames(make_frames(), EvalConfig(compute_nsd=False))
    assert all(f.mi_nsd is None for f in report.per_frame)
    assert report.per_stage[Stage.TEST_STAGE_2].mean_mi_nsd is None


def test_workers_do_not_change_the_report():
    frames = make_frames()
    cfg = EvalConfig(nsd_tolerance=1.0)
    assert evaluate_frames(frames, cfg, workers=1) == evaluate_frames(
        frames, cfg, workers=3
    )


def test_imperfect_prediction_lowers_stage_mean():
    frames = make_frames()
    g = frames[0].annotation.geometry
    half = Proposal(BinaryMask.from_runs(g, [(0, 3)]), 0.9)  # half of gt0
    frames[0] = EvalFrame(frames[0].frame_id, frames[0].annotation, (half,))
    report = evaluate_frames(frames, EvalConfig(compute_nsd=False))
    s1 = report.per_stage[Stage.TEST_STAGE_1]
    # frame 0: dsc(half) = 2*3/(3+6) = 2/3 over denominator 2
    assert report.per_frame[0].mi_dsc == pytest.approx((2 / 3) / 2)
    assert s1.mean_mi_dsc == pytest.approx((1.0 + (2 / 3) / 2) / 2)
    assert s1.q05_mi_dsc < s1.mean_mi_dsc
