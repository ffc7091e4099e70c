"""Metric tests, including the hand-computed precision-recall scenario."""

import numpy as np
import pytest

from cadet.evaluation import (
    Detection,
    attention_entropy,
    average_precision,
    collect_detections,
    evaluate_fmap,
    iou_xywh,
)


def det(clip, frame, cls, score, box, actor=0):
    return Detection(clip=clip, frame=frame, actor=actor, cls=cls,
                     score=score, box=np.asarray(box, dtype=np.float64))


def single_frame_gt(boxes, classes, n_classes):
    """One clip, one frame: boxes [(cx,cy,w,h)...], one class id each."""
    n = len(boxes)
    b = np.zeros((n, 1, 4))
    l = np.zeros((n, 1, n_classes))
    for i, (box, c) in enumerate(zip(boxes, classes)):
        b[i, 0] = box
        l[i, 0, c] = 1.0
    return b, l


BOX_A = (0.25, 0.25, 0.2, 0.2)
BOX_B = (0.75, 0.75, 0.2, 0.2)
FAR = (0.5, 0.5, 0.05, 0.05)


class TestIoU:
    def test_identical(self):
        assert iou_xywh(BOX_A, BOX_A) == pytest.approx(1.0)

    def test_disjoint(self):
        assert iou_xywh(BOX_A, BOX_B) == 0.0

    def test_half_overlap_value(self):
        # two unit-height boxes sharing half their width
        a = (0.4, 0.5, 0.2, 0.2)
        b = (0.5, 0.5, 0.2, 0.2)
        # intersection 0.1*0.2, union 2*0.04 - 0.02
        assert iou_xywh(a, b) == pytest.approx(0.02 / 0.06)


class TestAveragePrecision:
    def test_all_hits(self):
        assert average_precision([1, 1], 2) == pytest.approx(1.0)

    def test_no_detections(self):
        assert average_precision([], 2) == 0.0

    def test_hand_computed_envelope(self):
        # ranked TP, FP, TP over 2 GT: recall steps at 0.5 and 1.0 with
        # interpolated precisions 1.0 and 2/3
        ap = average_precision([1, 0, 1], 2)
        assert ap == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0))

    def test_missed_gt_caps_recall(self):
        ap = average_precision([1], 2)
        assert ap == pytest.approx(0.5)


class TestEvaluateFmap:
    def test_perfect_detections(self):
        boxes, labels = single_frame_gt([BOX_A, BOX_B], [0, 1], 2)
        dets = [
            det(0, 0, 0, 0.9, BOX_A),
            det(0, 0, 1, 0.8, BOX_B, actor=1),
        ]
        report = evaluate_fmap(dets, [(boxes, labels)], n_classes=2)
        assert report.fmap == pytest.approx(1.0)
        assert report.per_class_ap == {0: pytest.approx(1.0), 1: pytest.approx(1.0)}

    def test_zero_detections(self):
        boxes, labels = single_frame_gt([BOX_A], [0], 2)
        report = evaluate_fmap([], [(boxes, labels)], n_classes=2)
        assert report.fmap == 0.0
        assert report.skipped_classes == [1]

    def test_three_detection_scenario_matches_hand_pr(self):
        # two GT of class 0; detections ranked hit (0.9), miss (0.8),
        # hit (0.7): AP must equal 5/6 exactly
        boxes, labels = single_frame_gt([BOX_A, BOX_B], [0, 0], 1)
        dets = [
            det(0, 0, 0, 0.9, BOX_A),
            det(0, 0, 0, 0.8, FAR),
            det(0, 0, 0, 0.7, BOX_B),
        ]
        report = evaluate_fmap(dets, [(boxes, labels)], n_classes=1)
        assert report.fmap == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_duplicate_detection_is_a_false_positive(self):
        boxes, labels = single_frame_gt([BOX_A], [0], 1)
        dets = [
            det(0, 0, 0, 0.9, BOX_A),
            det(0, 0, 0, 0.8, BOX_A, actor=1),  # same GT again
        ]
        report = evaluate_fmap(dets, [(boxes, labels)], n_classes=1)
        assert report.fmap == pytest.approx(1.0)  # recall reached at rank 1
        # reversed ranking makes the duplicate absorb the match first
        dets_rev = [
            det(0, 0, 0, 0.9, (0.26, 0.25, 0.2, 0.2)),
            det(0, 0, 0, 0.95, BOX_A),
        ]
        report2 = evaluate_fmap(dets_rev, [(boxes, labels)], n_classes=1)
        assert report2.fmap == pytest.approx(1.0)

    def test_iou_exactly_at_threshold_counts(self):
        # dyadic coordinates make the IoU exactly 0.5 in floating point:
        # GT corners (0,0)-(0.5,0.5), detection (0,0)-(0.5,0.25)
        boxes, labels = single_frame_gt([(0.25, 0.25, 0.5, 0.5)], [0], 1)
        half = (0.25, 0.125, 0.5, 0.25)
        assert iou_xywh(half, boxes[0, 0]) == 0.5
        report = evaluate_fmap(
            [det(0, 0, 0, 0.9, half)], [(boxes, labels)],
            n_classes=1, iou_thresh=0.5,
        )
        assert report.fmap == pytest.approx(1.0)

    def test_empty_class_excluded_from_mean(self):
        boxes, labels = single_frame_gt([BOX_A], [0], 3)
        dets = [det(0, 0, 0, 0.9, BOX_A)]
        report = evaluate_fmap(dets, [(boxes, labels)], n_classes=3)
        assert report.skipped_classes == [1, 2]
        assert report.fmap == pytest.approx(1.0)

    def test_confusion_matrix_counts_wrong_class(self):
        boxes, labels = single_frame_gt([BOX_A], [0], 2)
        dets = [det(0, 0, 1, 0.9, BOX_A)]  # right place, wrong class
        report = evaluate_fmap(dets, [(boxes, labels)], n_classes=2)
        assert report.confusion["matrix"][0][1] == 1
        assert report.confusion["matrix"][0][0] == 0
        assert report.confusion["unmatched"] == [0, 0]

    def test_unmatched_gt_recorded(self):
        boxes, labels = single_frame_gt([BOX_A], [0], 2)
        report = evaluate_fmap([det(0, 0, 0, 0.9, BOX_B)], [(boxes, labels)], 2)
        assert report.confusion["unmatched"][0] == 1

    def test_report_serializes(self):
        import json

        boxes, labels = single_frame_gt([BOX_A], [0], 2)
        report = evaluate_fmap([det(0, 0, 0, 0.9, BOX_A)], [(boxes, labels)], 2,
                               attention=np.full((2, 4), 0.25))
        text = json.dumps(report.to_dict(), sort_keys=True)
        assert "fmap" in text and "attention_entropy" in text


class TestCollectDetections:
    class FakeOutput:
        def __init__(self, boxes, scores, conf):
            from cadet.tensor import Tensor

            self.boxes = Tensor(boxes)
            self.class_scores = Tensor(scores)
            self.confidence = Tensor(conf)

    def test_multi_label_scores_multiply_confidence(self):
        boxes = np.zeros((2, 1, 4)) + 0.5
        scores = np.array([[[0.8, 0.2]], [[0.4, 0.6]]])
        conf = np.array([0.5, 1.0])
        dets = collect_detections(self.FakeOutput(boxes, scores, conf), clip_index=3)
        assert len(dets) == 4
        by_key = {(d.actor, d.cls): d.score for d in dets}
        assert by_key[(0, 0)] == pytest.approx(0.4)
        assert by_key[(1, 1)] == pytest.approx(0.6)
        assert all(d.clip == 3 for d in dets)

    def test_single_label_scores_used_directly(self):
        boxes = np.zeros((1, 1, 4)) + 0.5
        scores = np.array([[[0.3, 0.1]]])
        conf = np.array([0.4])
        dets = collect_detections(
            self.FakeOutput(boxes, scores, conf), 0, label_mode="single"
        )
        assert sorted(d.score for d in dets) == pytest.approx([0.1, 0.3])


class TestAttentionEntropy:
    def test_uniform_rows(self):
        stats = attention_entropy(np.full((3, 8), 1.0 / 8.0))
        assert stats["mean"] == pytest.approx(np.log(8.0))
        assert stats["min"] == pytest.approx(stats["max"])

    def test_delta_rows(self):
        rows = np.zeros((2, 8))
        rows[:, 3] = 1.0
        stats = attention_entropy(rows)
        assert stats["max"] < 1e-9
