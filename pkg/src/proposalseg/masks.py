"""Run-length-encoded binary masks and pixel-exact set algebra.

Masks live on a fixed frame geometry and are stored as maximal
(start, length) runs over row-major pixel offsets.  All set algebra
(areas, intersections, votes) works directly on the run lists; dense
grids only appear at the encode/decode boundary.
"""

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GeometryMismatchError(ValueError):
    """Operands do not share the same frame geometry."""


@dataclass(frozen=True)
class FrameGeometry:
    """Pixel dimensions of one image frame."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(
                f"frame geometry must be at least 1x1, got {self.width}x{self.height}"
            )

    @property
    def npixels(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        """Numpy array shape, (rows, cols)."""
        return (self.height, self.width)


def _require_same_geometry(a, b):
    if a.geometry != b.geometry:
        raise GeometryMismatchError(f"geometry mismatch: {a.geometry} vs {b.geometry}")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Binary pixel mask as maximal (start, length) runs in row-major order.

    Runs are sorted by start offset, pairwise disjoint and non-adjacent,
    so every mask has exactly one representation.  Instances are immutable;
    the run arrays are read-only views.
    """

    geometry: FrameGeometry
    starts: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        starts = np.ascontiguousarray(self.starts, dtype=np.int64)
        lengths = np.ascontiguousarray(self.lengths, dtype=np.int64)
        if starts.ndim != 1 or lengths.ndim != 1 or starts.shape != lengths.shape:
            raise ValueError("starts and lengths must be 1-d arrays of equal size")
        if starts.size:
            if (lengths <= 0).any():
                raise ValueError("run lengths must be positive")
            ends = starts + lengths
            if starts[0] < 0 or ends[-1] > self.geometry.npixels:
                raise ValueError("runs must lie within the frame")
            if (starts[1:] <= ends[:-1]).any():
                raise ValueError("runs must be sorted, disjoint and non-adjacent")
        starts.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def empty(cls, geometry: FrameGeometry) -> "BinaryMask":
        z = np.empty(0, dtype=np.int64)
        return cls(geometry, z, z)

    @classmethod
    def full(cls, geometry: FrameGeometry) -> "BinaryMask":
        return cls(
            geometry,
            np.array([0], dtype=np.int64),
            np.array([geometry.npixels], dtype=np.int64),
        )

    @classmethod
    def from_runs(cls, geometry: FrameGeometry, runs: Iterable[Sequence[int]]) -> "BinaryMask":
        """Build a mask from possibly unsorted/overlapping (start, length) pairs.

        Runs are canonicalized (sorted, merged where they overlap or touch).
        Zero-length runs are dropped; negative or out-of-frame runs are
        rejected.
        """
        pairs = []
        for start, length in runs:
            start, length = int(start), int(length)
            if length < 0:
                raise ValueError(f"negative run length {length}")
            if length == 0:
                continue
            if start < 0 or start + length > geometry.npixels:
                raise ValueError(f"run ({start}, {length}) outside frame of {geometry.npixels} px")
            pairs.append((start, length))
        if not pairs:
            return cls.empty(geometry)
        pairs.sort()
        merged = [list(pairs[0])]
        for start, length in pairs[1:]:
            last = merged[-1]
            if start <= last[0] + last[1]:
                last[1] = max(last[1], start + length - last[0])
            else:
                merged.append([start, length])
        arr = np.asarray(merged, dtype=np.int64)
        return cls(geometry, arr[:, 0], arr[:, 1])

    @property
    def area(self) -> int:
        return int(self.lengths.sum())

    @property
    def is_empty(self) -> bool:
        return self.starts.size == 0

    def runs(self) -> list[tuple[int, int]]:
        """Run list as plain (start, length) tuples, e.g. for serialization."""
        return [(int(s), int(l)) for s, l in zip(self.starts, self.lengths)]

    def pixel_indices(self) -> np.ndarray:
        """Row-major offsets of all foreground pixels, ascending."""
        return _expand_runs(self.starts, self.lengths)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.lengths, other.lengths)
        )

    def __hash__(self) -> int:
        return hash((self.geometry, self.starts.tobytes(), self.lengths.tobytes()))

    def __repr__(self) -> str:
        return (
            f"BinaryMask({self.geometry.width}x{self.geometry.height}, "
            f"{self.starts.size} runs, area={self.area})"
        )


def _expand_runs(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    if starts.size == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(starts, lengths)
    base = np.repeat(np.cumsum(lengths) - lengths, lengths)
    return offsets + (np.arange(lengths.sum(), dtype=np.int64) - base)


def encode(grid: np.ndarray, geometry: FrameGeometry | None = None) -> BinaryMask:
    """Encode a dense row-major bit grid (rows, cols) into a mask.

    Raises GeometryMismatchError if an explicit geometry disagrees with
    the grid shape.
    """
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d grid, got shape {arr.shape}")
    derived = FrameGeometry(width=arr.shape[1], height=arr.shape[0])
    if geometry is None:
        geometry = derived
    elif geometry != derived:
        raise GeometryMismatchError(
            f"grid shape {arr.shape} does not match geometry {geometry}"
        )
    flat = arr.astype(bool).ravel()
    edges = np.diff(np.concatenate(([False], flat, [False])).astype(np.int8))
    starts = np.flatnonzero(edges == 1).astype(np.int64)
    ends = np.flatnonzero(edges == -1).astype(np.int64)
    return BinaryMask(geometry, starts, ends - starts)


def decode(mask: BinaryMask) -> np.ndarray:
    """Decode a mask back to a dense boolean grid of shape (height, width)."""
    flat = np.zeros(mask.geometry.npixels, dtype=bool)
    flat[mask.pixel_indices()] = True
    return flat.reshape(mask.geometry.shape)


def area(mask: BinaryMask) -> int:
    return mask.area


def intersection_area(a: BinaryMask, b: BinaryMask) -> int:
    """Overlap pixel count, computed by a sweep over the two run lists."""
    _require_same_geometry(a, b)
    if a.starts.size == 0 or b.starts.size == 0:
        return 0
    if b.starts.size < a.starts.size:
        a, b = b, a
    a_starts, a_ends = a.starts, a.starts + a.lengths
    b_starts, b_ends = b.starts, b.starts + b.lengths
    lo = np.searchsorted(b_ends, a_starts, side="right")
    hi = np.searchsorted(b_starts, a_ends, side="left")
    sel = hi > lo
    if not sel.any():
        return 0
    lo, hi = lo[sel], hi[sel]
    prefix = np.concatenate(([0], np.cumsum(b.lengths)))
    total = (prefix[hi] - prefix[lo]).sum()
    total -= np.maximum(a_starts[sel] - b_starts[lo], 0).sum()
    total -= np.maximum(b_ends[hi - 1] - a_ends[sel], 0).sum()
    return int(total)


def union_area(a: BinaryMask, b: BinaryMask) -> int:
    return a.area + b.area - intersection_area(a, b)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union.

    Both masks empty -> 1.0 (nothing to find, nothing predicted);
    exactly one empty -> 0.0.
    """
    _require_same_geometry(a, b)
    if a.is_empty and b.is_empty:
        return 1.0
    u = union_area(a, b)
    if u == 0:
        return 1.0
    return intersection_area(a, b) / u


def dsc(a: BinaryMask, b: BinaryMask) -> float:
    """Dice similarity coefficient, same empty-mask convention as iou()."""
    _require_same_geometry(a, b)
    denom = a.area + b.area
    if denom == 0:
        return 1.0
    return 2.0 * intersection_area(a, b) / denom


def coverage_at_least(
    masks: Sequence[BinaryMask],
    min_count: int,
    geometry: FrameGeometry | None = None,
) -> BinaryMask:
    """Mask of pixels covered by at least `min_count` of the given masks.

    Runs on the pooled run lists with a +1/-1 event sweep; never
    materializes a dense grid.  min_count=1 yields the n-way union.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if geometry is None:
        if not masks:
            raise ValueError("geometry required for an empty mask list")
        geometry = masks[0].geometry
    for m in masks:
        if m.geometry != geometry:
            raise GeometryMismatchError(f"geometry mismatch: {m.geometry} vs {geometry}")
    starts = [m.starts for m in masks if m.starts.size]
    if not starts:
        return BinaryMask.empty(geometry)
    all_starts = np.concatenate(starts)
    all_ends = np.concatenate([m.starts + m.lengths for m in masks if m.starts.size])
    pos = np.concatenate([all_starts, all_ends])
    delta = np.concatenate(
        [np.ones(all_starts.size, np.int64), -np.ones(all_ends.size, np.int64)]
    )
    upos, inverse = np.unique(pos, return_inverse=True)
    net = np.bincount(inverse, weights=delta, minlength=upos.size).astype(np.int64)
    cover = np.cumsum(net)  # coverage over [upos[i], upos[i+1]); trailing count is 0
    keep = cover >= min_count
    if not keep.any():
        return BinaryMask.empty(geometry)
    prev = np.concatenate(([False], keep[:-1]))
    nxt = np.concatenate((keep[1:], [False]))
    run_starts = upos[keep & ~prev]
    run_ends = upos[np.flatnonzero(keep & ~nxt) + 1]
    return BinaryMask(geometry, run_starts, run_ends - run_starts)


def shift(mask: BinaryMask, drow: int, dcol: int) -> BinaryMask:
    """Translate a mask by whole pixels; pixels pushed outside the frame drop."""
    if mask.is_empty or (drow == 0 and dcol == 0):
        return mask
    w = mask.geometry.width
    h = mask.geometry.height
    idx = mask.pixel_indices()
    rows = idx // w + drow
    cols = idx % w + dcol
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    if not ok.any():
        return BinaryMask.empty(mask.geometry)
    new_idx = rows[ok] * w + cols[ok]
    # offsets stay sorted under a rigid shift, so runs can be rebuilt directly
    breaks = np.flatnonzero(np.diff(new_idx) != 1)
    starts = np.concatenate(([new_idx[0]], new_idx[breaks + 1]))
    ends = np.concatenate((new_idx[breaks] + 1, [new_idx[-1] + 1]))
    return BinaryMask(mask.geometry, starts, ends - starts)


def relative_area(mask: BinaryMask) -> float:
    """Mask area divided by frame area."""
    return mask.area / mask.geometry.npixels
