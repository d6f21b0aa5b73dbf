"""Mask boundaries, exact Euclidean distance fields and surface dice.

The boundary of a mask is its inner 4-connectivity contour: every
foreground pixel with at least one background 4-neighbor, where pixels
outside the frame count as background.  Distances are measured between
pixel centers in pixel units.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, FrameGeometry, _require_same_geometry, decode


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """Inner-contour pixels of a mask as (row, col) coordinates."""

    geometry: FrameGeometry
    coords: np.ndarray  # (n, 2) int64, row-major sorted

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, 2)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def is_empty(self) -> bool:
        return self.coords.shape[0] == 0

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(r), int(c)) for r, c in self.coords}


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-pixel exact Euclidean distance to the nearest source pixel.

    `source_empty` marks the degenerate field produced by an empty source,
    where every value is +inf; consumers must check it before trusting
    the values.
    """

    geometry: FrameGeometry
    values: np.ndarray  # (height, width) float64
    source_empty: bool = False

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != self.geometry.shape:
            raise ValueError(
                f"field shape {values.shape} does not match geometry {self.geometry}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def at(self, coords: np.ndarray) -> np.ndarray:
        """Distances at (row, col) coordinate pairs."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        return self.values[coords[:, 0], coords[:, 1]]


def boundary(mask: BinaryMask) -> BoundarySet:
    """Inner 4-connectivity boundary; the frame border counts as background."""
    if mask.is_empty:
        return BoundarySet(mask.geometry, np.empty((0, 2), dtype=np.int64))
    grid = decode(mask)
    h, w = grid.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = grid
    interior = (
        padded[1:-1, 1:-1]
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    rows, cols = np.nonzero(grid & ~interior)
    return BoundarySet(mask.geometry, np.stack([rows, cols], axis=1).astype(np.int64))


def distance_transform(source: BoundarySet) -> DistanceField:
    """Exact Euclidean distance field of a pixel set.

    An empty source yields an all-infinite field flagged via
    `source_empty`.
    """
    geometry = source.geometry
    if source.is_empty:
        values = np.full(geometry.shape, np.inf)
        return DistanceField(geometry, values, source_empty=True)
    src = np.zeros(geometry.shape, dtype=bool)
    src[source.coords[:, 0], source.coords[:, 1]] = True
    values = ndimage.distance_transform_edt(~src)
    return DistanceField(geometry, np.asarray(values, dtype=np.float64))


def _nsd_from_boundaries(
    bound_a: BoundarySet,
    field_a: DistanceField,
    bound_b: BoundarySet,
    field_b: DistanceField,
    tolerance: float,
) -> float:
    near_a = int((field_b.at(bound_a.coords) <= tolerance).sum())
    near_b = int((field_a.at(bound_b.coords) <= tolerance).sum())
    return (near_a + near_b) / (bound_a.size + bound_b.size)


def surface_dice(pred: BinaryMask, gt: BinaryMask, tolerance: float) -> float:
    """Normalized surface dice at the given pixel tolerance.

    Fraction of the two masks' boundary pixels that lie within
    `tolerance` of the other mask's boundary.  Both masks empty -> 1.0;
    exactly one empty -> 0.0.
    """
    _require_same_geometry(pred, gt)
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    if pred.is_empty and gt.is_empty:
        return 1.0
    if pred.is_empty or gt.is_empty:
        return 0.0
    bp, bg = boundary(pred), boundary(gt)
    return _nsd_from_boundaries(bp, distance_transform(bp), bg, distance_transform(bg), tolerance)
