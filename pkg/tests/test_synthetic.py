"""Synthetic dataset generator: determinism, structure, ranking degradation."""

import numpy as np
import pytest

from proposalseg.masks import FrameGeometry
from proposalseg.merging import Proposal
from proposalseg.metrics import SizeBin, Stage
from proposalseg.synthetic import (
    GenerationError,
    JitterSpec,
    ScoreModel,
    SynthConfig,
    degrade_ranking,
    generate_dataset,
)

SMALL = SynthConfig(
    seed=5,
    geometry=FrameGeometry(64, 48),
    instruments_per_frame=(1, 2),
    cluster_size=(6, 9),
    distractors_per_frame=(1, 3),
    frames_per_stage=(3, 2, 1),
)


def test_generation_is_bit_deterministic():
    a = generate_dataset(SMALL)
    b = generate_dataset(SMALL)
    assert a == b
    c = generate_dataset(SynthConfig(**{**_kwargs(SMALL), "seed": 6}))
    assert c != a


def _kwargs(config):
    return {
        "seed": config.seed,
        "geometry": config.geometry,
        "instruments_per_frame": config.instruments_per_frame,
        "size_bin_mix": config.size_bin_mix,
        "cluster_size": config.cluster_size,
        "jitter": config.jitter,
        "distractors_per_frame": config.distractors_per_frame,
        "true_scores": config.true_scores,
        "distractor_scores": config.distractor_scores,
        "frames_per_stage": config.frames_per_stage,
    }


def test_stage_layout_and_frame_ids():
    ds = generate_dataset(SMALL)
    ids = [f.frame_id for f in ds.frames]
    assert ids[:3] == ["stage1_0000", "stage1_0001", "stage1_0002"]
    assert ids[3:5] == ["stage2_0000", "stage2_0001"]
    assert ids[5:] == ["stage3_0000"]
    stages = [f.annotation.stage for f in ds.frames]
    assert stages == [Stage.TEST_STAGE_1] * 3 + [Stage.TEST_STAGE_2] * 2 + [Stage.TEST_STAGE_3]


def test_frame_structure_invariants():
    ds = generate_dataset(SMALL)
    lo_c, hi_c = SMALL.cluster_size
    lo_d, hi_d = SMALL.distractors_per_frame
    for frame in ds.frames:
        n = len(frame.annotation.instances)
        assert SMALL.instruments_per_frame[0] <= n <= SMALL.instruments_per_frame[1]
        assert len(frame.proposals) == len(frame.origins)
        scores = [p.score for p in frame.proposals]
        assert scores == sorted(scores, reverse=True)
        assert all(not p.mask.is_empty for p in frame.proposals)
        assert all(p.mask.geometry == SMALL.geometry for p in frame.proposals)
        counts = {k: 0 for k in range(-1, n)}
        for origin in frame.origins:
            assert -1 <= origin < n
            counts[origin] += 1
        for k in range(n):
            assert lo_c <= counts[k] <= hi_c
        assert lo_d <= counts[-1] <= hi_d


def test_zero_jitter_cluster_copies_the_instrument():
    config = SynthConfig(
        seed=9,
        geometry=FrameGeometry(64, 48),
        jitter=JitterSpec(shift=0, morph=0),
        true_scores=ScoreModel(mean=0.95, spread=0.0),
        frames_per_stage=(2, 0, 0),
    )
    ds = generate_dataset(config)
    for frame in ds.frames:
        for proposal, origin in zip(frame.proposals, frame.origins):
            if origin >= 0:
                assert proposal.mask == frame.annotation.instances[origin]
                assert proposal.score == 0.95


def test_impossible_packing_raises():
    config = SynthConfig(
        seed=1,
        geometry=FrameGeometry(48, 48),
        instruments_per_frame=(10, 10),  # 10 disjoint XL shapes cannot fit
        size_bin_mix={SizeBin.XL: 1.0},
        frames_per_stage=(1, 0, 0),
    )
    with pytest.raises(GenerationError):
        generate_dataset(config)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        SynthConfig(instruments_per_frame=(3, 1))
    with pytest.raises(ValueError):
        SynthConfig(frames_per_stage=(1, 2))
    with pytest.raises(ValueError):
        SynthConfig(size_bin_mix={})
    with pytest.raises(ValueError):
        JitterSpec(shift=-1)
    with pytest.raises(ValueError):
        ScoreModel(mean=0.5, spread=-0.1)
    restored = SynthConfig.from_mapping(SMALL.to_mapping())
    assert restored == SMALL
    with pytest.raises(ValueError):
        SynthConfig.from_mapping({"seed": 1, "bogus": 2})


def test_score_model_clips_to_unit_interval():
    rng = np.random.default_rng(7)
    wide = ScoreModel(mean=0.9, spread=3.0)
    draws = [wide.sample(rng) for _ in range(200)]
    assert all(0.0 <= v <= 1.0 for v in draws)
    assert min(draws) == 0.0 and max(draws) == 1.0  # clipping engaged


# ---------------------------------------------------------------------------
# ranking degradation

def make_ranked(n):
    g = FrameGeometry(32, 32)
    out = []
    for i in range(n):
        mask = np.zeros(g.shape, dtype=bool)
        mask[i % 32, : i + 1] = True
        from proposalseg.masks import encode

        out.append(Proposal(encode(mask, g), round(1.0 - i * 0.01, 4)))
    return out


def test_degrade_zero_rate_is_identity():
    ranked = make_ranked(12)
    assert degrade_ranking(ranked, 0.0, seed=3) == ranked


def test_degrade_permutes_scores_only():
    ranked = make_ranked(20)
    out = degrade_ranking(ranked, 0.7, seed=3)
    assert [p.mask for p in out] == [p.mask for p in ranked]  # masks keep position
    assert sorted(p.score for p in out) == sorted(p.score for p in ranked)
    assert [p.score for p in out] != [p.score for p in ranked]
    assert degrade_ranking(ranked, 0.7, seed=3) == out  # seeded
    assert degrade_ranking(ranked, 0.7, seed=4) != out


def test_degrade_edge_cases():
    assert degrade_ranking([], 1.0, seed=0) == []
    one = make_ranked(1)
    assert degrade_ranking(one, 1.0, seed=0) == one
    with pytest.raises(ValueError):
        degrade_ranking(one, 1.5, seed=0)
