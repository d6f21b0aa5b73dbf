"""Three-step reduction of ranked proposal masks to final instances.

Raw proposal generators emit many near-duplicate masks per object.  The
pipeline (1) drops proposals whose objectness score falls below a
threshold, (2) groups the survivors into connected components of the
pairwise-overlap graph and discards groups that are too small, and
(3) fuses each surviving group into a single mask by an inclusive
per-pixel vote.
"""

from dataclasses import dataclass
from typing import Sequence

from .masks import (
    BinaryMask,
    GeometryMismatchError,
    coverage_at_least,
    intersection_area,
    iou,
)

DEFAULT_SCORE_THRESHOLD = 0.8
DEFAULT_MIN_GROUP_SIZE = 5
DEFAULT_VOTE_FRACTION = 0.10


@dataclass(frozen=True)
class Proposal:
    """One candidate object: a mask plus an objectness score in [0, 1]."""

    mask: BinaryMask
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"objectness score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class MergeConfig:
    """Pipeline constants.

    `overlap_min_iou` = 0 means any shared pixel connects two proposals;
    a positive value requires at least that IoU instead.  The vote is
    inclusive: a pixel survives when it appears in at least
    `vote_fraction` of a group's masks.
    """

    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    min_group_size: int = DEFAULT_MIN_GROUP_SIZE
    vote_fraction: float = DEFAULT_VOTE_FRACTION
    overlap_min_iou: float = 0.0

    def __post_init__(self):
        if self.min_group_size < 1:
            raise ValueError("min_group_size must be >= 1")
        if not 0.0 < self.vote_fraction <= 1.0:
            raise ValueError("vote_fraction must be in (0, 1]")
        if not 0.0 <= self.overlap_min_iou < 1.0:
            raise ValueError("overlap_min_iou must be in [0, 1)")


@dataclass(frozen=True)
class ProposalGroup:
    """A fused group: member indices into the caller's proposal list."""

    members: tuple[int, ...]
    merged: BinaryMask
    merged_score: float


def filter_by_score(proposals: Sequence[Proposal], threshold: float) -> list[Proposal]:
    """Keep proposals scoring at least `threshold`, preserving input order.

    A score exactly equal to the threshold survives; only strictly lower
    scores are removed.
    """
    return [p for p in proposals if p.score >= threshold]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_overlap_groups(
    proposals: Sequence[Proposal], overlap_min_iou: float = 0.0
) -> list[list[int]]:
    """Partition proposal indices into connected components of the overlap graph.

    Two proposals are connected when they share at least one pixel
    (overlap_min_iou = 0) or reach the given IoU.  Connectivity is
    transitive, so a chain of pairwise overlaps forms one group.
    Groups are ordered by their smallest member index; members ascend.
    """
    n = len(proposals)
    if n == 0:
        return []
    geometry = proposals[0].mask.geometry
    for p in proposals:
        if p.mask.geometry != geometry:
            raise GeometryMismatchError(
                f"geometry mismatch: {p.mask.geometry} vs {geometry}"
            )
    uf = _UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if uf.find(i) == uf.find(j):
                continue
            if overlap_min_iou > 0.0:
                connected = iou(proposals[i].mask, proposals[j].mask) >= overlap_min_iou
            else:
                connected = intersection_area(proposals[i].mask, proposals[j].mask) > 0
            if connected:
                uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return [groups[root] for root in sorted(groups)]


def vote_min_count(n_members: int, vote_fraction: float) -> int:
    """Smallest member count c with c / n_members >= vote_fraction."""
    k = max(1, int(vote_fraction * n_members))
    while k > 1 and (k - 1) / n_members >= vote_fraction:
        k -= 1
    while k <= n_members and k / n_members < vote_fraction:
        k += 1
    return k


def merge_group(members: Sequence[Proposal], vote_fraction: float) -> BinaryMask:
    """Fuse a group into one mask by an inclusive pixel vote.

    A pixel belongs to the result iff the fraction of member masks
    containing it is at least `vote_fraction` ("at least" = inclusive,
    so with 10 members and a 0.10 fraction a single containing mask
    suffices).
    """
    if not members:
        raise ValueError("cannot merge an empty group")
    if not 0.0 < vote_fraction <= 1.0:
        raise ValueError("vote_fraction must be in (0, 1]")
    min_count = vote_min_count(len(members), vote_fraction)
    return coverage_at_least([p.mask for p in members], min_count)


def merged_score(members: Sequence[Proposal]) -> float:
    """Score of a fused group: the maximum member score."""
    if not members:
        raise ValueError("cannot score an empty group")
    return max(p.score for p in members)


def run_pipeline(
    proposals: Sequence[Proposal], config: MergeConfig = MergeConfig()
) -> list[ProposalGroup]:
    """Full post-processing: filter, group, size-gate, fuse.

    Member indices in the returned groups refer to positions in the
    *input* proposal list.  Groups smaller than `min_group_size`, and
    groups whose vote merge comes out empty, are discarded.  Output is
    sorted by merged score descending, ties broken by larger merged
    area, then by the smallest member index.
    """
    kept_indices = [
        i for i, p in enumerate(proposals) if p.score >= config.score_threshold
    ]
    kept = [proposals[i] for i in kept_indices]
    results = []
    for group in build_overlap_groups(kept, config.overlap_min_iou):
        if len(group) < config.min_group_size:
            continue
        members = [kept[i] for i in group]
        merged = merge_group(members, config.vote_fraction)
        if merged.is_empty:
            continue
        results.append(
            ProposalGroup(
                members=tuple(kept_indices[i] for i in group),
                merged=merged,
                merged_score=merged_score(members),
            )
        )
    results.sort(key=lambda g: (-g.merged_score, -g.merged.area, g.members[0]))
    return results
