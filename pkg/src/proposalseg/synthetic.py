"""Seeded synthetic frames: instrument-like shapes plus raw proposal streams.

Stands in for restricted surgical footage at desk scale.  Ground-truth
instances are elongated capsules anchored at the frame border (optionally
with a thicker tip).  Each instrument spawns a cluster of jittered
near-duplicate proposals; unrelated low-score distractor blobs are mixed
in.  Everything is driven by one numpy PCG64 generator, so a given
(seed, config) pair reproduces the dataset bit for bit on any platform.
"""

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, FrameGeometry, decode, encode, intersection_area, shift
from .merging import Proposal
from .metrics import FrameAnnotation, SizeBin, Stage

TEST_STAGES = (Stage.TEST_STAGE_1, Stage.TEST_STAGE_2, Stage.TEST_STAGE_3)

DEFAULT_SIZE_MIX = {
    SizeBin.XS: 0.15,
    SizeBin.S: 0.20,
    SizeBin.M: 0.30,
    SizeBin.L: 0.20,
    SizeBin.XL: 0.15,
}

# sampled relative areas are capped here so XL instruments stay packable
XL_REL_CAP = 0.18
DISTRACTOR_REL_RANGE = (0.002, 0.03)
PLACEMENT_ATTEMPTS = 200


class GenerationError(RuntimeError):
    """Raised when instruments cannot be packed into the frame."""


@dataclass(frozen=True)
class JitterSpec:
    """Proposal perturbation magnitudes, in pixels."""

    shift: int = 2
    morph: int = 1  # max dilation/erosion iterations

    def __post_init__(self):
        if self.shift < 0 or self.morph < 0:
            raise ValueError("jitter magnitudes must be >= 0")


@dataclass(frozen=True)
class ScoreModel:
    """Objectness scores are drawn from N(mean, spread) clipped to [0, 1]."""

    mean: float
    spread: float

    def __post_init__(self):
        if self.spread < 0:
            raise ValueError("score spread must be >= 0")

    def sample(self, rng: np.random.Generator) -> float:
        value = self.mean if self.spread == 0 else rng.normal(self.mean, self.spread)
        return float(min(1.0, max(0.0, value)))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    geometry: FrameGeometry = FrameGeometry(160, 120)
    instruments_per_frame: tuple[int, int] = (1, 3)
    size_bin_mix: Mapping[SizeBin, float] = field(
        default_factory=lambda: dict(DEFAULT_SIZE_MIX)
    )
    cluster_size: tuple[int, int] = (8, 15)
    jitter: JitterSpec = JitterSpec()
    distractors_per_frame: tuple[int, int] = (2, 6)
    true_scores: ScoreModel = ScoreModel(mean=0.90, spread=0.05)
    distractor_scores: ScoreModel = ScoreModel(mean=0.45, spread=0.10)
    frames_per_stage: tuple[int, int, int] = (20, 20, 20)

    def __post_init__(self):
        for name in ("instruments_per_frame", "cluster_size", "distractors_per_frame"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a (lo, hi) range with 0 <= lo <= hi")
        if len(self.frames_per_stage) != 3 or any(n < 0 for n in self.frames_per_stage):
            raise ValueError("frames_per_stage needs one nonnegative count per test stage")
        mix = {SizeBin(k): float(v) for k, v in self.size_bin_mix.items()}
        if not mix or any(w < 0 for w in mix.values()) or sum(mix.values()) <= 0:
            raise ValueError("size_bin_mix needs nonnegative weights with a positive sum")
        object.__setattr__(self, "size_bin_mix", mix)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SynthConfig":
        """Build from a parsed JSON object; unknown keys are rejected."""
        data = dict(data)
        kwargs = {}
        if "seed" in data:
            kwargs["seed"] = int(data.pop("seed"))
        if "geometry" in data:
            g = data.pop("geometry")
            kwargs["geometry"] = FrameGeometry(int(g["width"]), int(g["height"]))
        for name in ("instruments_per_frame", "cluster_size", "distractors_per_frame"):
            if name in data:
                lo, hi = data.pop(name)
                kwargs[name] = (int(lo), int(hi))
        if "size_bin_mix" in data:
            kwargs["size_bin_mix"] = {
                SizeBin(k): float(v) for k, v in data.pop("size_bin_mix").items()
            }
        if "jitter" in data:
            j = data.pop("jitter")
            kwargs["jitter"] = JitterSpec(int(j["shift"]), int(j["morph"]))
        for name in ("true_scores", "distractor_scores"):
            if name in data:
                s = data.pop(name)
                kwargs[name] = ScoreModel(float(s["mean"]), float(s["spread"]))
        if "frames_per_stage" in data:
            kwargs["frames_per_stage"] = tuple(int(n) for n in data.pop("frames_per_stage"))
        if data:
            raise ValueError(f"unknown synth config keys: {sorted(data)}")
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {
            "seed": self.seed,
            "geometry": {"width": self.geometry.width, "height": self.geometry.height},
            "instruments_per_frame": list(self.instruments_per_frame),
            "size_bin_mix": {b.value: w for b, w in self.size_bin_mix.items()},
            "cluster_size": list(self.cluster_size),
            "jitter": {"shift": self.jitter.shift, "morph": self.jitter.morph},
            "distractors_per_frame": list(self.distractors_per_frame),
            "true_scores": {"mean": self.true_scores.mean, "spread": self.true_scores.spread},
            "distractor_scores": {
                "mean": self.distractor_scores.mean,
                "spread": self.distractor_scores.spread,
            },
            "frames_per_stage": list(self.frames_per_stage),
        }


@dataclass(frozen=True)
class SynthFrame:
    """One generated frame; `origins` maps each proposal to the instrument
    index it was jittered from, -1 for distractors (test bookkeeping only,
    never an input to the pipeline)."""

    frame_id: str
    annotation: FrameAnnotation
    proposals: tuple[Proposal, ...]
    origins: tuple[int, ...]


@dataclass(frozen=True)
class SynthDataset:
    config: SynthConfig
    frames: tuple[SynthFrame, ...]


def _capsule_grid(
    geometry: FrameGeometry,
    r0: float,
    c0: float,
    r1: float,
    c1: float,
    radius: float,
) -> np.ndarray:
    rows, cols = np.mgrid[0 : geometry.height, 0 : geometry.width].astype(float)
    dr, dc = r1 - r0, c1 - c0
    seg2 = dr * dr + dc * dc
    if seg2 == 0:
        t = np.zeros_like(rows)
    else:
        t = np.clip(((rows - r0) * dr + (cols - c0) * dc) / seg2, 0.0, 1.0)
    d2 = (rows - (r0 + t * dr)) ** 2 + (cols - (c0 + t * dc)) ** 2
    return d2 <= radius * radius


def _sample_range(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _sample_instrument(
    rng: np.random.Generator, geometry: FrameGeometry, mix: Mapping[SizeBin, float]
) -> BinaryMask:
    bins = list(mix)
    weights = np.array([mix[b] for b in bins], dtype=float)
    chosen = bins[int(rng.choice(len(bins), p=weights / weights.sum()))]
    lo, hi = chosen.bounds
    hi = min(hi, XL_REL_CAP)
    rel = float(rng.uniform(lo, hi))
    target = max(1.0, rel * geometry.npixels)

    elongation = float(rng.uniform(3.0, 6.0))
    radius = max(1.0, math.sqrt(target / (4.0 * elongation + math.pi)))
    length = 2.0 * elongation * radius

    side = int(rng.integers(4))
    w, h = geometry.width, geometry.height
    if side == 0:  # enters from the top
        anchor = (0.0, float(rng.uniform(0, w - 1)))
        inward = math.pi / 2
    elif side == 1:  # bottom
        anchor = (float(h - 1), float(rng.uniform(0, w - 1)))
        inward = -math.pi / 2
    elif side == 2:  # left
        anchor = (float(rng.uniform(0, h - 1)), 0.0)
        inward = 0.0
    else:  # right
        anchor = (float(rng.uniform(0, h - 1)), float(w - 1))
        inward = math.pi
    angle = inward + float(rng.uniform(-0.6, 0.6))
    tip = (anchor[0] + length * math.sin(angle), anchor[1] + length * math.cos(angle))

    grid = _capsule_grid(geometry, anchor[0], anchor[1], tip[0], tip[1], radius)
    if rng.uniform() < 0.3:  # occasional thicker working tip
        grid |= _capsule_grid(geometry, tip[0], tip[1], tip[0], tip[1], radius * 1.4)
    return encode(grid, geometry)


def _place_instruments(
    rng: np.random.Generator, config: SynthConfig, count: int
) -> list[BinaryMask]:
    placed: list[BinaryMask] = []
    for _ in range(count):
        for _ in range(PLACEMENT_ATTEMPTS):
            candidate = _sample_instrument(rng, config.geometry, config.size_bin_mix)
            if candidate.is_empty:
                continue
            if all(intersection_area(candidate, m) == 0 for m in placed):
                placed.append(candidate)
                break
        else:
            raise GenerationError(
                f"could not place instrument {len(placed) + 1}/{count} after "
                f"{PLACEMENT_ATTEMPTS} attempts; frame too crowded for the size mix"
            )
    return placed


def _jittered_copy(
    rng: np.random.Generator, mask: BinaryMask, jitter: JitterSpec
) -> BinaryMask:
    out = mask
    if jitter.shift > 0:
        dr = _sample_range(rng, -jitter.shift, jitter.shift)
        dc = _sample_range(rng, -jitter.shift, jitter.shift)
        out = shift(out, dr, dc)
    if jitter.morph > 0:
        k = _sample_range(rng, -jitter.morph, jitter.morph)
        if k != 0 and not out.is_empty:
            grid = decode(out)
            if k > 0:
                grid = ndimage.binary_dilation(grid, iterations=k)
            else:
                grid = ndimage.binary_erosion(grid, iterations=-k)
            out = encode(grid, mask.geometry)
    if out.is_empty:  # jitter must never produce an empty proposal
        return mask
    return out


def _sample_distractor(rng: np.random.Generator, geometry: FrameGeometry) -> BinaryMask:
    rel = float(rng.uniform(*DISTRACTOR_REL_RANGE))
    target = max(1.0, rel * geometry.npixels)
    elongation = float(rng.uniform(1.0, 3.0))
    radius = max(1.0, math.sqrt(target / (4.0 * elongation + math.pi)))
    length = 2.0 * elongation * radius
    r0 = float(rng.uniform(0, geometry.height - 1))
    c0 = float(rng.uniform(0, geometry.width - 1))
    angle = float(rng.uniform(0, 2 * math.pi))
    grid = _capsule_grid(
        geometry, r0, c0, r0 + length * math.sin(angle), c0 + length * math.cos(angle), radius
    )
    mask = encode(grid, geometry)
    if mask.is_empty:  # keep the invariant even for degenerate draws
        single = np.zeros(geometry.shape, dtype=bool)
        single[int(r0), int(c0)] = True
        mask = encode(single, geometry)
    return mask


def _generate_frame(
    rng: np.random.Generator, config: SynthConfig, stage: Stage, index: int
) -> SynthFrame:
    n_instruments = _sample_range(rng, *config.instruments_per_frame)
    instruments = _place_instruments(rng, config, n_instruments)
    annotation = FrameAnnotation(config.geometry, tuple(instruments), stage)

    records: list[tuple[Proposal, int]] = []
    for idx, instrument in enumerate(instruments):
        for _ in range(_sample_range(rng, *config.cluster_size)):
            mask = _jittered_copy(rng, instrument, config.jitter)
            records.append((Proposal(mask, config.true_scores.sample(rng)), idx))
    for _ in range(_sample_range(rng, *config.distractors_per_frame)):
        mask = _sample_distractor(rng, config.geometry)
        records.append((Proposal(mask, config.distractor_scores.sample(rng)), -1))

    records.sort(key=lambda rec: -rec[0].score)  # stable: ties keep generation order
    return SynthFrame(
        frame_id=f"{stage.value}_{index:04d}",
        annotation=annotation,
        proposals=tuple(p for p, _ in records),
        origins=tuple(o for _, o in records),
    )


def generate_dataset(config: SynthConfig) -> SynthDataset:
    """Generate all stages' frames from one deterministic PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    frames = []
    for stage, count in zip(TEST_STAGES, config.frames_per_stage):
        for index in range(count):
            frames.append(_generate_frame(rng, config, stage, index))
    return SynthDataset(config=config, frames=tuple(frames))


def degrade_ranking(
    proposals: Sequence[Proposal], swap_rate: float, seed: int
) -> list[Proposal]:
    """Redistribute scores among proposals by seeded random transpositions.

    The mask set is untouched; only which mask carries which score
    changes.  The number of transpositions is round(swap_rate * n), so
    swap_rate 0 is the identity and swap_rate 1 approaches a full
    shuffle.
    """
    if not 0.0 <= swap_rate <= 1.0:
        raise ValueError(f"swap_rate must be in [0, 1], got {swap_rate}")
    n = len(proposals)
    scores = [p.score for p in proposals]
    if n >= 2:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        for _ in range(int(round(swap_rate * n))):
            i, j = rng.choice(n, size=2, replace=False)
            scores[i], scores[j] = scores[j], scores[i]
    return [Proposal(p.mask, s) for p, s in zip(proposals, scores)]
