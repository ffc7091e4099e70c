"""Clip generator: bounds, cue placement, determinism, threading."""

import numpy as np
import pytest

from cadet.synthetic import (
    SyntheticClip,
    TaskConfig,
    class_cue_color,
    generate_clip,
    make_dataset,
    to_ground_truth,
)


def pixel_rect(box, h, w):
    """Normalized (cx, cy, w, h) -> pixel (y0, x0, y1, x1)."""
    cx, cy, bw, bh = box
    x0 = (cx - bw / 2) * w
    y0 = (cy - bh / 2) * h
    return y0, x0, y0 + bh * h, x0 + bw * w


class TestGeneration:
    def test_actors_stay_in_bounds(self):
        cfg = TaskConfig()
        for seed in range(30):
            clip = generate_clip(cfg, np.random.default_rng(seed))
            assert np.all(clip.boxes >= 0.0) and np.all(clip.boxes <= 1.0)
            corners_lo = clip.boxes[..., :2] - clip.boxes[..., 2:] / 2
            corners_hi = clip.boxes[..., :2] + clip.boxes[..., 2:] / 2
            assert np.all(corners_lo >= -1e-9)
            assert np.all(corners_hi <= 1.0 + 1e-9)

    def test_frames_in_unit_range(self):
        clip = generate_clip(TaskConfig(), np.random.default_rng(1))
        assert clip.frames.shape == (4, 32, 32, 3)
        assert clip.frames.min() >= 0.0 and clip.frames.max() <= 1.0

    def test_labels_one_hot_and_constant_over_time(self):
        for seed in range(10):
            clip = generate_clip(TaskConfig(), np.random.default_rng(seed))
            sums = clip.labels.sum(axis=-1)
            np.testing.assert_array_equal(sums, np.ones_like(sums))
            for i in range(clip.n_actors):
                first = clip.labels[i, 0]
                np.testing.assert_array_equal(clip.labels[i], np.tile(first, (4, 1)))

    def test_cue_sits_outside_actor_box(self):
        # the class cue must put its channel-1/2 energy strictly outside
        # the actor box in every frame
        cfg = TaskConfig()
        for seed in range(20):
            clip = generate_clip(cfg, np.random.default_rng(seed))
            h, w = cfg.frame_h, cfg.frame_w
            for i in range(clip.n_actors):
                for t in range(cfg.n_frames):
                    y0, x0, y1, x1 = pixel_rect(clip.boxes[i, t], h, w)
                    inside = clip.frames[
                        t, int(round(y0)) : int(round(y1)),
                        int(round(x0)) : int(round(x1)), 1:,
                    ]
                    # ramp plus distractor gray only; never cue-bright
                    assert inside.max() < 0.5

    def test_cue_channel_energy_separates_two_classes(self):
        cfg = TaskConfig(n_classes=2, min_actors=1, max_actors=1, n_distractors=0)
        seen = set()
        for seed in range(40):
            clip = generate_clip(cfg, np.random.default_rng(seed))
            c = int(np.argmax(clip.labels[0, 0]))
            seen.add(c)
            ch1 = (clip.frames[..., 1] > 0.5).sum()
            ch2 = (clip.frames[..., 2] > 0.5).sum()
            if c == 0:
                assert ch1 > 0 and ch2 == 0
            else:
                assert ch2 > 0 and ch1 == 0
        assert seen == {0, 1}

    def test_same_action_mode_shares_the_class(self):
        cfg = TaskConfig(min_actors=2, max_actors=2, same_action=True)
        for seed in range(10):
            clip = generate_clip(cfg, np.random.default_rng(seed))
            assert clip.n_actors == 2
            assert clip.scenario["classes"][0] == clip.scenario["classes"][1]

    def test_actor_count_within_bounds(self):
        cfg = TaskConfig(min_actors=1, max_actors=2)
        counts = set()
        for seed in range(30):
            clip = generate_clip(cfg, np.random.default_rng(seed))
            counts.add(clip.n_actors)
        assert counts == {1, 2}

    def test_cue_color_endpoints(self):
        assert class_cue_color(0, 2) == pytest.approx((0.9, 0.0))
        assert class_cue_color(1, 2) == pytest.approx((0.0, 0.9))

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            TaskConfig(min_actors=3, max_actors=2).validate()
        with pytest.raises(ValueError):
            TaskConfig(frame_h=8).validate()


class TestDataset:
    def test_deterministic_per_seed(self):
        cfg = TaskConfig()
        a = make_dataset(cfg, 4, seed=5)
        b = make_dataset(cfg, 4, seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.frames, y.frames)
            np.testing.assert_array_equal(x.boxes, y.boxes)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_thread_count_does_not_change_results(self):
        cfg = TaskConfig()
        serial = make_dataset(cfg, 6, seed=11, threads=1)
        threaded = make_dataset(cfg, 6, seed=11, threads=3)
        for x, y in zip(serial, threaded):
            np.testing.assert_array_equal(x.frames, y.frames)
            np.testing.assert_array_equal(x.boxes, y.boxes)

    def test_different_seeds_differ(self):
        cfg = TaskConfig()
        a = make_dataset(cfg, 1, seed=1)[0]
        b = make_dataset(cfg, 1, seed=2)[0]
        assert not np.array_equal(a.frames, b.frames)


class TestGroundTruthConversion:
    def test_padding(self):
        clip = generate_clip(
            TaskConfig(min_actors=1, max_actors=1), np.random.default_rng(3)
        )
        gt = to_ground_truth(clip, 4)
        assert gt.n_real == 1 and gt.n_actors == 4
        np.testing.assert_array_equal(gt.boxes[0], clip.boxes[0])
        assert np.all(gt.boxes[1:] == 0.0) and np.all(gt.classes[1:] == 0.0)

    def test_rejects_overfull_clip(self):
        clip = generate_clip(
            TaskConfig(min_actors=2, max_actors=2), np.random.default_rng(3)
        )
        with pytest.raises(ValueError, match="budget"):
            to_ground_truth(clip, 1)
