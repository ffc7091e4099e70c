"""Variant suite: confusion metric oracle, config diffs, artifacts."""

import json
import os

import numpy as np
import pytest

from cadet.ablation import (PUBLISHED_REFERENCE, VARIANTS, ablation_suite,
                            actor_confusion, attention_mass_in_box,
                            config_diff)
from cadet.evaluation import EvalReport
from cadet.matching import GroundTruth, MatchConfig
from cadet.model import ModelConfig, ModelOutput
from cadet.synthetic import TaskConfig
from cadet.tensor import Tensor
from cadet.training import TrainConfig


def micro_model_cfg(seed=0, **kw):
    base = dict(embed_dim=6, n_heads=2, n_levels=2, n_points=2, n_actors=2,
                n_enc_layers=1, n_dec_layers=1, n_classes=2, n_frames=2,
                frame_h=16, frame_w=16, grid_h=4, grid_w=4, ffn_dim=8,
                seed=seed)
    base.update(kw)
    return ModelConfig(**base).validate()


class TestMassInBox:
    def test_uniform_attention_left_half(self):
        row = np.full(16, 1.0 / 16)
        # box spanning the left two columns of a 4x4 grid, full height
        mass = attention_mass_in_box(row, (0.25, 0.5, 0.5, 1.0), (4, 4))
        assert mass == pytest.approx(0.5)

    def test_single_cell(self):
        row = np.zeros(16)
        row[5] = 1.0  # cell (y=1, x=1), center (0.375, 0.375)
        box = (0.375, 0.375, 0.25, 0.25)
        assert attention_mass_in_box(row, box, (4, 4)) == pytest.approx(1.0)
        far = (0.875, 0.875, 0.25, 0.25)
        assert attention_mass_in_box(row, far, (4, 4)) == 0.0

    def test_empty_box_catches_nothing(self):
        row = np.full(16, 1.0 / 16)
        assert attention_mass_in_box(row, (0.5, 0.5, 0.0, 0.0), (4, 4)) == 0.0


def hand_output(attn, boxes, scores, grid=(4, 4)):
    n_a, t_dim = boxes.shape[:2]
    hw = grid[0] * grid[1]
    return ModelOutput(
        boxes=Tensor(boxes),
        class_scores=Tensor(scores),
        confidence=Tensor(np.full(n_a, 0.9)),
        class_attention=Tensor(attn),
        actor_attention=Tensor(np.full((n_a, t_dim, hw), 1.0 / hw)),
        level_weights=Tensor(np.full((n_a, t_dim, 2), 0.5)),
        grid=grid,
    )


class TestActorConfusion:
    def setup_method(self):
        # two actors in opposite quadrants, both doing class 0
        self.boxes = np.zeros((2, 2, 4))
        self.boxes[0, :] = (0.25, 0.25, 0.5, 0.5)
        self.boxes[1, :] = (0.75, 0.75, 0.5, 0.5)
        self.labels = np.zeros((2, 2, 2))
        self.labels[:, :, 0] = 1.0
        self.gt = GroundTruth(self.boxes, self.labels, 2)
        self.cfg = MatchConfig()

    def attn_with_fractions(self, f0, f1):
        """Class-0 rows putting fraction f_i of actor i's mass in the
        OTHER actor's quadrant, the rest in its own."""
        attn = np.zeros((2, 2, 2, 16))
        own = {0: 5, 1: 10}     # one cell inside each actor's box
        for i, frac in ((0, f0), (1, f1)):
            other = own[1 - i]
            attn[i, :, 0, own[i]] = 1.0 - frac
            attn[i, :, 0, other] = frac
        return attn

    def test_hand_value(self):
        # perfect predictions so the assignment is identity
        scores = np.zeros((2, 2, 2))
        scores[:, :, 0] = 0.95
        out = hand_output(self.attn_with_fractions(0.75, 0.25),
                          self.boxes, scores)
        value = actor_confusion(out, self.gt, self.cfg)
        assert value == pytest.approx(0.5)  # mean of 0.75 and 0.25

    def test_clean_maps_score_zero(self):
        scores = np.zeros((2, 2, 2))
        scores[:, :, 0] = 0.95
        out = hand_output(self.attn_with_fractions(0.0, 0.0),
                          self.boxes, scores)
        assert actor_confusion(out, self.gt, self.cfg) == 0.0

    def test_follows_the_assignment_not_the_row_order(self):
        # swap the prediction slots; the metric must unswap via matching
        scores = np.zeros((2, 2, 2))
        scores[:, :, 0] = 0.95
        attn = self.attn_with_fractions(0.75, 0.25)[::-1].copy()
        out = hand_output(attn, self.boxes[::-1].copy(), scores)
        value = actor_confusion(out, self.gt, self.cfg)
        assert value == pytest.approx(0.5)

    def test_single_actor_is_nan(self):
        gt = GroundTruth(self.boxes * [[[1.0]], [[0.0]]],
                         self.labels * [[[1.0]], [[0.0]]], 1)
        scores = np.zeros((2, 2, 2))
        scores[:, :, 0] = 0.95
        out = hand_output(self.attn_with_fractions(0.3, 0.3),
                          self.boxes, scores)
        assert np.isnan(actor_confusion(out, gt, self.cfg))


class TestConfigDiff:
    def test_single_flag(self):
        full = micro_model_cfg()
        variant = full.with_overrides(use_actor_pos=False)
        assert config_diff(full, variant) == {"use_actor_pos": (True, False)}

    def test_identical_is_empty(self):
        assert config_diff(micro_model_cfg(), micro_model_cfg()) == {}

    def test_every_variant_differs_only_in_its_flag(self):
        full = micro_model_cfg()
        for name, overrides in VARIANTS.items():
            variant = full.with_overrides(**overrides)
            assert set(config_diff(full, variant)) == set(overrides), name


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    return ablation_suite(
        micro_model_cfg(),
        TaskConfig(n_classes=2, frame_h=16, frame_w=16, n_frames=2,
                   n_distractors=1),
        TrainConfig(steps=3, batch_size=2, n_clips=3, val_clips=2,
                    lr=1e-3, warmup_steps=2, log_every=1),
        str(out),
        variants=("full", "no_actor_pos"),
    )


class TestSuite:
    def test_artifacts_exist(self, suite):
        assert os.path.exists(suite.path)
        base = os.path.dirname(suite.path)
        for name in ("full", "no_actor_pos"):
            for artifact in ("model.cadt", "metrics.jsonl", "report.json",
                             "val.cvds"):
                assert os.path.exists(os.path.join(base, name, artifact))

    def test_reports_are_valid(self, suite):
        for name in ("full", "no_actor_pos"):
            report = suite.reports[name]
            assert isinstance(report, EvalReport)
            assert 0.0 <= report.fmap <= 1.0
            assert set(report.per_class_ap) <= {0, 1}

    def test_summary_rows(self, suite):
        with open(suite.path) as fh:
            on_disk = json.load(fh)
        assert on_disk == suite.summary
        for name in ("full", "no_actor_pos"):
            row = on_disk["variants"][name]
            assert 0.0 <= row["fmap"] <= 1.0
            assert 0.0 <= row["actor_confusion"] <= 1.0
            assert np.isfinite(row["final_loss"])
        assert on_disk["variants"]["no_actor_pos"]["config_diff_vs_full"] == {
            "use_actor_pos": [True, False]
        }
        assert on_disk["variants"]["full"]["config_diff_vs_full"] == {}

    def test_reference_and_deltas(self, suite):
        ref = suite.summary["published_reference"]
        assert ref["fmap_with"] == PUBLISHED_REFERENCE["fmap_with"] == 33.5
        assert ref["fmap_without"] == 31.7
        deltas = suite.summary["deltas_vs_full"]["no_actor_pos"]
        full = suite.summary["variants"]["full"]
        varnt = suite.summary["variants"]["no_actor_pos"]
        assert deltas["fmap"] == pytest.approx(varnt["fmap"] - full["fmap"])

    def test_unknown_variant_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown ablation variant"):
            ablation_suite(micro_model_cfg(), TaskConfig(), TrainConfig(),
                           str(tmp_path), variants=("full", "bogus"))

    def test_tiny_actor_budget_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="budget"):
            ablation_suite(micro_model_cfg(n_actors=1), TaskConfig(),
                           TrainConfig(), str(tmp_path))
