"""Set-prediction matching and the detection training objective.

Ground truth for a clip is padded to the fixed actor budget: the first
n_real rows are live annotations, the rest are all-zero tubes with
all-zero label blocks. Predictions are matched to the padded rows with
an exact Hungarian solve over a cost built from box distance, overlap,
and a classification term; the loss then follows the matched pairing.
Matching is deliberately outside the autodiff tape, so costs are plain
numpy and only the loss builds a graph.
"""

from __future__ import annotations

import numpy as np

from . import diagnostics
from . import tensor as T
from .boxes import box_giou, l1_box_loss
from .tensor import Tensor, no_grad

__all__ = [
    "GroundTruth",
    "MatchConfig",
    "MatchingError",
    "pairwise_costs",
    "hungarian",
    "match",
    "focal_loss",
    "bce_loss",
    "detection_loss",
]

# probabilities are clamped into [eps, 1 - eps] before any log
_PROB_EPS = 1e-7


class MatchingError(ValueError):
    """Raised when a matching cost entry is not finite."""


class MatchConfig:
    """Coefficients for the matching costs and the loss terms.

    class_cost picks how classification enters the cost matrix: "bce"
    scores predicted class probabilities against the padded targets,
    "neg_confidence" uses -p_j so ground truth gravitates toward
    high-confidence predictions (useful for heavily multi-label data,
    where per-class BCE is a weak pairing signal).
    """

    def __init__(
        self,
        eta_box: float = 5.0,
        eta_giou: float = 2.0,
        eta_class: float = 2.0,
        lambda_class: float = 10.0,
        lambda_box: float = 5.0,
        lambda_giou: float = 2.0,
        lambda_conf: float = 1.0,
        class_cost: str = "bce",
        focal_alpha: float = 0.25,
        focal_gamma: float = 2.0,
    ):
        coeffs = {
            "eta_box": eta_box,
            "eta_giou": eta_giou,
            "eta_class": eta_class,
            "lambda_class": lambda_class,
            "lambda_box": lambda_box,
            "lambda_giou": lambda_giou,
            "lambda_conf": lambda_conf,
        }
        for name, value in coeffs.items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if class_cost not in ("bce", "neg_confidence"):
            raise ValueError(
                f"class_cost must be 'bce' or 'neg_confidence', got {class_cost!r}"
            )
        self.eta_box = float(eta_box)
        self.eta_giou = float(eta_giou)
        self.eta_class = float(eta_class)
        self.lambda_class = float(lambda_class)
        self.lambda_box = float(lambda_box)
        self.lambda_giou = float(lambda_giou)
        self.lambda_conf = float(lambda_conf)
        self.class_cost = class_cost
        self.focal_alpha = float(focal_alpha)
        self.focal_gamma = float(focal_gamma)

    def __eq__(self, other):
        if not isinstance(other, MatchConfig):
            return NotImplemented
        return self.__dict__ == other.__dict__

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in sorted(self.__dict__.items()))
        return f"MatchConfig({inner})"


class GroundTruth:
    """Padded per-clip targets.

    boxes is [N_a, T, 4] in (cx, cy, w, h), classes is [N_a, T, N_c]
    binary, and rows at index >= n_real must be exactly zero.
    """

    def __init__(self, boxes, classes, n_real: int):
        boxes = np.asarray(boxes, dtype=np.float64)
        classes = np.asarray(classes, dtype=np.float64)
        if boxes.ndim != 3 or boxes.shape[-1] != 4:
            raise ValueError(f"boxes must be [N_a, T, 4], got {boxes.shape}")
        if classes.ndim != 3 or classes.shape[:2] != boxes.shape[:2]:
            raise ValueError(
                f"classes must be [N_a, T, N_c] aligned with boxes, "
                f"got {classes.shape} vs {boxes.shape}"
            )
        n_a = boxes.shape[0]
        if not 0 <= n_real <= n_a:
            raise ValueError(f"n_real={n_real} outside [0, {n_a}]")
        if n_real < n_a:
            if np.any(boxes[n_real:] != 0.0) or np.any(classes[n_real:] != 0.0):
                raise ValueError("padded rows must be exactly zero")
        self.boxes = boxes
        self.classes = classes
        self.n_real = int(n_real)

    @property
    def n_actors(self) -> int:
        return self.boxes.shape[0]

    @property
    def n_frames(self) -> int:
        return self.boxes.shape[1]


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def pairwise_costs(gt: GroundTruth, pred_boxes, pred_classes, confidence,
                   cfg: MatchConfig) -> np.ndarray:
    """Cost[i, j] of pairing ground-truth row i with prediction j.

    Box distance and negative overlap are averaged over frames and only
    apply to live rows; padded rows carry the classification term alone,
    so padding ends up on whatever predictions the live rows leave
    behind (lowest confidence first in neg_confidence mode).
    """
    pb = _as_array(pred_boxes)
    pc = _as_array(pred_classes)
    p = _as_array(confidence).reshape(-1)
    n_a, n_t = gt.n_actors, gt.n_frames
    if pb.shape != (n_a, n_t, 4):
        raise ValueError(f"pred_boxes shape {pb.shape} != {(n_a, n_t, 4)}")
    if pc.shape != gt.classes.shape:
        raise ValueError(f"pred_classes shape {pc.shape} != {gt.classes.shape}")
    if p.shape != (n_a,):
        raise ValueError(f"confidence must hold {n_a} values, got {p.shape}")

    if cfg.class_cost == "neg_confidence":
        # one column per prediction, identical down every row
        cls = np.broadcast_to(-p, (n_a, n_a)).copy()
    else:
        q = np.clip(pc, _PROB_EPS, 1.0 - _PROB_EPS)
        log_q = np.log(q)
        log_1q = np.log1p(-q)
        c = gt.classes
        # mean over frames and classes of the elementwise cross entropy
        cls = -(
            np.tensordot(c, log_q, axes=([1, 2], [1, 2]))
            + np.tensordot(1.0 - c, log_1q, axes=([1, 2], [1, 2]))
        ) / (n_t * pc.shape[-1])

    cost = cfg.eta_class * cls
    if gt.n_real > 0:
        live = Tensor(gt.boxes[: gt.n_real, None])  # [R, 1, T, 4]
        pred = Tensor(pb[None])  # [1, N_a, T, 4]
        with no_grad():
            l1 = l1_box_loss(live, pred).data.mean(axis=-1)
            overlap = box_giou(live, pred).data.mean(axis=-1)
        cost[: gt.n_real] += cfg.eta_box * l1 - cfg.eta_giou * overlap

    bad = np.argwhere(~np.isfinite(cost))
    if bad.size:
        i, j = bad[0]
        raise MatchingError(
            f"non-finite matching cost between ground-truth row {i} "
            f"and prediction {j}"
        )
    return cost


def hungarian(cost) -> np.ndarray:
    """Exact minimum-cost assignment on a square matrix.

    Augmenting-path algorithm with row/column potentials, O(n^3).
    Returns omega with omega[i] = column assigned to row i.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise MatchingError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)

    inf = float("inf")
    # 1-indexed potentials; p[j] is the row matched to column j, way[j]
    # remembers the previous column on the alternating path
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    omega = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        omega[p[j] - 1] = j - 1
    return omega


def match(gt: GroundTruth, pred_boxes, pred_classes, confidence,
          cfg: MatchConfig) -> np.ndarray:
    """Cost construction plus the Hungarian solve in one call."""
    return hungarian(pairwise_costs(gt, pred_boxes, pred_classes, confidence, cfg))


def _clamped_prob(p) -> Tensor:
    """Clamp probabilities into [eps, 1 - eps], counting any clipping."""
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    outside = int(np.sum((p.data < _PROB_EPS) | (p.data > 1.0 - _PROB_EPS)))
    if outside:
        diagnostics.bump("losses.prob_clamp", outside)
    return T.clamp(p, _PROB_EPS, 1.0 - _PROB_EPS)


def focal_loss(target, p, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Elementwise binary focal loss.

    -alpha * (1-p)^gamma * log p on positives and
    -(1-alpha) * p^gamma * log(1-p) on negatives; gamma = 0 reduces to
    an alpha-weighted cross entropy.
    """
    target = np.asarray(target, dtype=np.float64)
    q = _clamped_prob(p)
    pos = T.log(q) * (-alpha) * (1.0 - q) ** gamma
    neg = T.log(1.0 - q) * (alpha - 1.0) * q**gamma
    return pos * target + neg * (1.0 - target)


def bce_loss(target, p) -> Tensor:
    """Elementwise binary cross entropy with clamped probabilities."""
    target = np.asarray(target, dtype=np.float64)
    q = _clamped_prob(p)
    return -(T.log(q) * target + T.log(1.0 - q) * (1.0 - target))


def detection_loss(gt: GroundTruth, pred_boxes, pred_classes, confidence,
                   assignment, cfg: MatchConfig, terms: dict = None) -> Tensor:
    """Full training objective for one clip under a fixed assignment.

    Every row pays the focal classification term (padded rows against
    all-zero targets) and a confidence term whose target is 1 on live
    rows and 0 on padding; live rows additionally pay L1 and negative
    GIoU on the matched boxes. Per-frame values are averaged over both
    frames and rows. The assignment is data, not a tape node, so the
    result is differentiable in the predictions only.

    Passing a dict as ``terms`` fills it with the four weighted term
    means as plain floats (keys class/box/giou/conf) for logging; the
    returned total is computed the same way either way.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    n_a, n_t = gt.n_actors, gt.n_frames
    if not np.array_equal(np.sort(assignment), np.arange(n_a)):
        raise ValueError("assignment must be a permutation of the rows")

    pb = pred_boxes if isinstance(pred_boxes, Tensor) else Tensor(np.asarray(pred_boxes, dtype=np.float64))
    pc = pred_classes if isinstance(pred_classes, Tensor) else Tensor(np.asarray(pred_classes, dtype=np.float64))
    conf = confidence if isinstance(confidence, Tensor) else Tensor(np.asarray(confidence, dtype=np.float64))
    conf = conf.reshape(-1)

    matched_boxes = T.take(pb, assignment, axis=0)
    matched_classes = T.take(pc, assignment, axis=0)
    matched_conf = T.take(conf, assignment, axis=0)

    live = (np.arange(n_a) < gt.n_real).astype(np.float64)

    cls = focal_loss(gt.classes, matched_classes, cfg.focal_alpha, cfg.focal_gamma)
    cls = cls.mean(axis=-1)  # [N_a, T]

    l1 = l1_box_loss(Tensor(gt.boxes), matched_boxes)  # [N_a, T]
    overlap = box_giou(Tensor(gt.boxes), matched_boxes)  # [N_a, T]
    conf_term = bce_loss(live, matched_conf)  # [N_a]

    per_frame = (
        cls * cfg.lambda_class
        + (l1 * cfg.lambda_box - overlap * cfg.lambda_giou) * live[:, None]
        + (conf_term * cfg.lambda_conf).unsqueeze(1)
    )
    total = per_frame.mean()
    if terms is not None:
        terms["class"] = float((cls * cfg.lambda_class).mean().data)
        terms["box"] = float((l1 * cfg.lambda_box * live[:, None]).mean().data)
        terms["giou"] = float((overlap * (-cfg.lambda_giou) * live[:, None]).mean().data)
        terms["conf"] = float((conf_term * cfg.lambda_conf).mean().data)
    return total
