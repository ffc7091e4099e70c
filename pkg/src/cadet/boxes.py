"""Axis-aligned box geometry on normalized coordinates.

A box is the last-axis quadruple (cx, cy, w, h) with every value in
[0, 1]; a tube is a [T, 4] stack of per-frame boxes. All functions
broadcast over leading axes and are differentiable through the tensor
engine. Values are taken pairwise (elementwise), not all-pairs; build
all-pairs via broadcasting at the call site.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "box_to_corners",
    "box_iou",
    "box_giou",
    "l1_box_loss",
    "logit",
    "box_area",
]

# guards divisions when both operands have zero area; keeps IoU at its
# defined value of 0 for degenerate boxes without branching the tape
_TINY = 1e-12


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def box_to_corners(box, clip: bool = True) -> Tensor:
    """(cx, cy, w, h) -> (x0, y0, x1, y1).

    Corners are clipped to [0, 1] with a straight-through gradient, so
    boxes that spill over the frame edge still receive position updates.
    """
    box = _ensure(box)
    cx, cy = box[..., 0], box[..., 1]
    w, h = box[..., 2], box[..., 3]
    half_w = w * 0.5
    half_h = h * 0.5
    corners = T.stack([cx - half_w, cy - half_h, cx + half_w, cy + half_h], axis=-1)
    if clip:
        corners = T.clamp(corners, 0.0, 1.0, straight_through=True)
    return corners


def box_area(corners: Tensor) -> Tensor:
    w = T.maximum(corners[..., 2] - corners[..., 0], 0.0)
    h = T.maximum(corners[..., 3] - corners[..., 1], 0.0)
    return w * h


def _intersection(a: Tensor, b: Tensor) -> Tensor:
    x0 = T.maximum(a[..., 0], b[..., 0])
    y0 = T.maximum(a[..., 1], b[..., 1])
    x1 = T.minimum(a[..., 2], b[..., 2])
    y1 = T.minimum(a[..., 3], b[..., 3])
    return T.maximum(x1 - x0, 0.0) * T.maximum(y1 - y0, 0.0)


def box_iou(box_a, box_b) -> Tensor:
    """Pairwise IoU; 0 when the union is degenerate (both areas zero)."""
    a = box_to_corners(_ensure(box_a))
    b = box_to_corners(_ensure(box_b))
    inter = _intersection(a, b)
    union = box_area(a) + box_area(b) - inter
    return inter / T.maximum(union, _TINY)


def box_giou(box_a, box_b) -> Tensor:
    """Generalized IoU in [-1, 1]: IoU minus the enclosing-box penalty.

    The penalty term survives even when IoU is zero, which is what makes
    it a usable gradient signal for disjoint boxes.
    """
    a = box_to_corners(_ensure(box_a))
    b = box_to_corners(_ensure(box_b))
    inter = _intersection(a, b)
    union = box_area(a) + box_area(b) - inter
    iou = inter / T.maximum(union, _TINY)

    ex0 = T.minimum(a[..., 0], b[..., 0])
    ey0 = T.minimum(a[..., 1], b[..., 1])
    ex1 = T.maximum(a[..., 2], b[..., 2])
    ey1 = T.maximum(a[..., 3], b[..., 3])
    enclosing = (ex1 - ex0) * (ey1 - ey0)
    return iou - (enclosing - union) / T.maximum(enclosing, _TINY)


def l1_box_loss(box_a, box_b) -> Tensor:
    """Sum of absolute coordinate differences in (cx, cy, w, h) space."""
    a = _ensure(box_a)
    b = _ensure(box_b)
    diff = a - b
    return T.maximum(diff, -diff).sum(axis=-1)


def logit(p: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Inverse sigmoid on raw arrays, with inputs clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)
