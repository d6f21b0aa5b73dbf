"""Overlay images for qualitative inspection.

Each ground-truth instance is either found (its best-IoU prediction is
painted as a filled colored region with a solid outline) or missed
(the instance itself is drawn as an unfilled red contour).  Background
is black.  Rendering is pixel-deterministic for a given input.
"""

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .masks import BinaryMask, decode, iou
from .metrics import FrameAnnotation
from .surface import boundary

DEFAULT_FOUND_IOU = 0.5
MISSED_COLOR = (255, 0, 0)  # reserved for missed contours
_PALETTE = (
    (0, 200, 90),
    (70, 130, 255),
    (255, 200, 0),
    (0, 220, 220),
    (200, 80, 255),
    (255, 140, 0),
    (150, 255, 150),
    (255, 110, 180),
)
_FILL_WEIGHT = 0.55  # interior brightness relative to the outline


def _paint_contour(img: np.ndarray, mask: BinaryMask, color) -> None:
    coords = boundary(mask).coords
    if coords.size:
        img[coords[:, 0], coords[:, 1]] = color


def render_overlay(
    annotation: FrameAnnotation,
    predictions: Sequence[BinaryMask],
    found_iou: float = DEFAULT_FOUND_IOU,
) -> np.ndarray:
    """Render found/missed instances to an (H, W, 3) uint8 image."""
    if not 0.0 < found_iou <= 1.0:
        raise ValueError(f"found_iou must be in (0, 1], got {found_iou}")
    img = np.zeros((*annotation.geometry.shape, 3), dtype=np.uint8)

    missed: list[BinaryMask] = []
    for gt_index, gt in enumerate(annotation.instances):
        best: BinaryMask | None = None
        best_iou = 0.0
        for pred in predictions:  # ties keep the earlier (higher-ranked) mask
            value = iou(gt, pred)
            if value > best_iou:
                best, best_iou = pred, value
        if best is None or best_iou < found_iou:
            missed.append(gt)
            continue
        color = _PALETTE[gt_index % len(_PALETTE)]
        fill = tuple(int(c * _FILL_WEIGHT) for c in color)
        img[decode(best)] = fill
        _paint_contour(img, best, color)

    # draw last so red contours stay visible over neighboring fills
    for gt in missed:
        _paint_contour(img, gt, MISSED_COLOR)
    return img


def write_overlay(
    path,
    annotation: FrameAnnotation,
    predictions: Sequence[BinaryMask],
    found_iou: float = DEFAULT_FOUND_IOU,
) -> np.ndarray:
    """Render and save as PNG; returns the image array."""
    img = render_overlay(annotation, predictions, found_iou)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(path)
    return img
