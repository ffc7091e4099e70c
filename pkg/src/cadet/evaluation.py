"""Frame-level detection metrics: per-class AP at an IoU threshold.

Detections are ranked by score with a deterministic lexicographic
tiebreak, greedily matched to unmatched ground truth in the same
(clip, frame), and scored with all-point interpolated average
precision. The mean runs over classes that have at least one ground
truth instance; empty classes are recorded, not averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["Detection", "EvalReport", "collect_detections", "evaluate_fmap",
           "attention_entropy", "average_precision"]


@dataclass
class Detection:
    clip: int
    frame: int
    actor: int
    cls: int
    score: float
    box: np.ndarray  # (cx, cy, w, h) normalized


@dataclass
class EvalReport:
    per_class_ap: dict
    fmap: float
    gt_counts: dict
    skipped_classes: list
    confusion: dict
    attention_entropy: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "fmap": self.fmap,
            "gt_counts": {str(k): v for k, v in sorted(self.gt_counts.items())},
            "skipped_classes": list(self.skipped_classes),
            "confusion": self.confusion,
        }
        if self.attention_entropy is not None:
            out["attention_entropy"] = self.attention_entropy
        return out


def _corners(box):
    cx, cy, w, h = box
    return (
        np.clip(cx - w / 2, 0.0, 1.0),
        np.clip(cy - h / 2, 0.0, 1.0),
        np.clip(cx + w / 2, 0.0, 1.0),
        np.clip(cy + h / 2, 0.0, 1.0),
    )


def iou_xywh(box_a, box_b) -> float:
    ax0, ay0, ax1, ay1 = _corners(box_a)
    bx0, by0, bx1, by1 = _corners(box_b)
    iw = max(min(ax1, bx1) - max(ax0, bx0), 0.0)
    ih = max(min(ay1, by1) - max(ay0, by0), 0.0)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / max(union, 1e-12)


def collect_detections(output, clip_index: int, label_mode: str = "multi") -> list:
    """Flatten one clip's model output into ranked detection candidates.

    In multi-label mode the detection score is confidence times the
    class probability; single-label scores already carry the confidence
    factor (they sum to it), so they are used as-is.
    """
    boxes = output.boxes.data
    scores = output.class_scores.data
    conf = output.confidence.data
    n_actors, t_dim, n_classes = scores.shape
    out = []
    for i in range(n_actors):
        for t in range(t_dim):
            for c in range(n_classes):
                s = scores[i, t, c] if label_mode == "single" else conf[i] * scores[i, t, c]
                out.append(Detection(clip=clip_index, frame=t, actor=i, cls=c,
                                     score=float(s), box=boxes[i, t].copy()))
    return out


def average_precision(flags, n_gt: int) -> float:
    """All-point interpolated AP from ranked hit/miss flags.

    flags: 1 for a true positive, 0 for a false positive, best-first.
    """
    if n_gt == 0:
        return 0.0
    flags = np.asarray(flags, dtype=np.float64)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # precision envelope, then sum rectangle areas between recall steps
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[0.0], precision])
    for k in range(precision.size - 2, -1, -1):
        precision[k] = max(precision[k], precision[k + 1])
    ap = 0.0
    for k in range(1, recall.size):
        ap += (recall[k] - recall[k - 1]) * precision[k]
    return float(ap)


def _ranked(dets: list) -> list:
    order = sorted(
        range(len(dets)),
        key=lambda n: (-dets[n].score, dets[n].clip, dets[n].frame, dets[n].actor),
    )
    return [dets[n] for n in order]


def evaluate_fmap(detections: list, gts: list, n_classes: int,
                  iou_thresh: float = 0.5,
                  attention: Optional[np.ndarray] = None) -> EvalReport:
    """Score detections against ground truth.

    gts: one (boxes [N_X, T, 4], labels [N_X, T, N_c]) pair per clip,
    live rows only. detections: Detection list over all clips.
    """
    # index ground truth instances by (clip, frame, class)
    gt_index = {}
    gt_counts = {c: 0 for c in range(n_classes)}
    for clip_id, (boxes, labels) in enumerate(gts):
        n_x, t_dim = labels.shape[:2]
        for i in range(n_x):
            for t in range(t_dim):
                for c in range(n_classes):
                    if labels[i, t, c] > 0:
                        gt_index.setdefault((clip_id, t, c), []).append(
                            {"box": boxes[i, t], "matched": False, "actor": i}
                        )
                        gt_counts[c] += 1

    per_class_ap = {}
    skipped = []
    for c in range(n_classes):
        if gt_counts[c] == 0:
            skipped.append(c)
            continue
        flags = []
        for det in _ranked([d for d in detections if d.cls == c]):
            pool = gt_index.get((det.clip, det.frame, c), [])
            best, best_iou = None, iou_thresh
            for entry in pool:
                if entry["matched"]:
                    continue
                iou = iou_xywh(det.box, entry["box"])
                if iou >= best_iou:
                    best, best_iou = entry, iou
            if best is not None:
                best["matched"] = True
                flags.append(1.0)
            else:
                flags.append(0.0)
        per_class_ap[c] = average_precision(flags, gt_counts[c])

    scored = [per_class_ap[c] for c in per_class_ap]
    fmap = float(np.mean(scored)) if scored else 0.0

    confusion = _confusion_summary(detections, gts, n_classes, iou_thresh)
    entropy = attention_entropy(attention) if attention is not None else None
    return EvalReport(
        per_class_ap=per_class_ap,
        fmap=fmap,
        gt_counts=gt_counts,
        skipped_classes=skipped,
        confusion=confusion,
        attention_entropy=entropy,
    )


def _confusion_summary(detections, gts, n_classes: int, iou_thresh: float) -> dict:
    """For each GT instance, the class of its best-scoring overlapping
    detection (any class); unmatched instances counted separately."""
    by_frame = {}
    for det in detections:
        by_frame.setdefault((det.clip, det.frame), []).append(det)
    matrix = [[0] * n_classes for _ in range(n_classes)]
    unmatched = [0] * n_classes
    for clip_id, (boxes, labels) in enumerate(gts):
        n_x, t_dim = labels.shape[:2]
        for i in range(n_x):
            for t in range(t_dim):
                true_classes = [c for c in range(n_classes) if labels[i, t, c] > 0]
                if not true_classes:
                    continue
                pool = by_frame.get((clip_id, t), [])
                best = None
                for det in pool:
                    if iou_xywh(det.box, boxes[i, t]) >= iou_thresh:
                        if best is None or det.score > best.score:
                            best = det
                for c in true_classes:
                    if best is None:
                        unmatched[c] += 1
                    else:
                        matrix[c][best.cls] += 1
    return {"matrix": matrix, "unmatched": unmatched}


def attention_entropy(attn) -> dict:
    """Entropy statistics of attention rows (last axis sums to one)."""
    a = np.asarray(attn, dtype=np.float64)
    a = a.reshape(-1, a.shape[-1])
    p = np.clip(a, 1e-12, None)
    ent = -np.sum(p * np.log(p), axis=-1)
    return {"mean": float(ent.mean()), "min": float(ent.min()),
            "max": float(ent.max())}
