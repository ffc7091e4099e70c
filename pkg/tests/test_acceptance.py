"""Release gate: nine criteria, one test and one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s``. Every test prints
``ACCEPTANCE <n> PASS/FAIL: <title>`` so a log scan shows the whole gate
at a glance. Criteria 1 and 7 dominate the runtime (minutes); the rest
finish in seconds. Criterion 7 trains the committed configuration from
``configs/separable2.cfg`` and is the only test here that needs a
wall-clock budget.
"""

import itertools
import json
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from test_encoder import identity_projections, make_pyramid, ref_trilinear
from test_matching import (
    random_instance,
    ref_detection_loss,
)

from cadet import tensor as T
from cadet.ablation import PUBLISHED_REFERENCE, ablation_suite
from cadet.attention import modulated_box_query, sinusoidal_encoding
from cadet.cdl import BaselineSharedHead, ClassifyingDecoderLayer, classification_head
from cadet.checks import TOLERANCES, run_suite
from cadet.config import ModelConfig, load_run_config
from cadet.encoder import DeformableEncoderLayer, normalized_to_grid
from cadet.evaluation import Detection, evaluate_fmap
from cadet.ldl import ActorState, LocalizingDecoderLayer, aggregate_levels
from cadet.matching import MatchConfig, detection_loss, hungarian
from cadet.synthetic import TaskConfig
from cadet.tensor import Tensor
from cadet.training import TrainConfig, train

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@contextmanager
def criterion(n: int, title: str):
    info = {}
    try:
        yield info
    except BaseException:
        print(f"\nACCEPTANCE {n} FAIL: {title}")
        raise
    detail = f" ({info['detail']})" if "detail" in info else ""
    print(f"\nACCEPTANCE {n} PASS: {title}{detail}")


def test_criterion_1_gradient_suite():
    with criterion(1, "gradient suite, 100 seeds, all tiers in tolerance") as info:
        start = time.monotonic()
        worst = {name: 0.0 for name in TOLERANCES}
        for seed in range(100):
            result = run_suite(seed)
            assert result.passed, "\n".join(result.lines())
            for name in worst:
                worst[name] = max(worst[name], result.worst(name))
        elapsed = time.monotonic() - start
        for name, tol in TOLERANCES.items():
            assert worst[name] < tol, f"{name}: {worst[name]:.3e} >= {tol}"
        assert elapsed < 300.0, f"suite took {elapsed:.0f}s, limit 300s"
        info["detail"] = (
            f"ops {worst['ops']:.1e}, composites {worst['composites']:.1e}, "
            f"end-to-end {worst['end_to_end']:.1e}, {elapsed:.0f}s"
        )


def test_criterion_2_hungarian_exactness():
    with criterion(2, "Hungarian equals brute-force minimum exactly") as info:
        start = time.monotonic()
        rng = np.random.default_rng(2024)
        checked = 0
        for n in range(2, 8):
            perms = np.array(list(itertools.permutations(range(n))))
            rows = np.arange(n)
            costs = rng.uniform(-5.0, 5.0, (1000, n, n))
            # a slice of duplicated entries exercises tie handling
            costs[::7] = np.round(costs[::7])
            for chunk in range(0, 1000, 100):
                block = costs[chunk : chunk + 100]
                # gather block[m, i, perms[p, i]] for every m, p
                totals = np.take_along_axis(
                    block[:, None, rows, :], perms[None, :, :, None], axis=-1
                )[..., 0].sum(axis=-1)
                best = totals.min(axis=1)
                for m in range(block.shape[0]):
                    omega = hungarian(block[m])
                    got = block[m][rows, omega].sum()
                    assert got == best[m], (
                        f"n={n} matrix {chunk + m}: {got!r} != {best[m]!r}"
                    )
                    checked += 1
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s, limit 60s"
        info["detail"] = f"{checked} matrices, n 2..7, {elapsed:.1f}s"


def test_criterion_3_deformable_degeneracy():
    with criterion(3, "zero-offset deformable equals multi-level trilinear") as info:
        rng = np.random.default_rng(3033)
        worst = 0.0
        for trial in range(200):
            heads = int(rng.integers(1, 3))
            dim = heads * int(rng.integers(2, 5))
            n_levels = int(rng.integers(1, 4))
            shapes = [
                (int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
                for _ in range(n_levels)
            ]
            points = int(rng.integers(1, 4))
            pyramid = make_pyramid(rng, shapes, dim)
            layer = DeformableEncoderLayer(dim, heads, n_levels, points, 16, rng)
            identity_projections(layer)
            n_q = int(rng.integers(1, 8))
            refs = rng.uniform(0.05, 0.95, (n_q, 3))
            queries = Tensor(rng.standard_normal((n_q, dim)))
            out = layer.deformable_attend(queries, refs, pyramid).data
            expected = np.mean(
                [
                    ref_trilinear(lvl.data, normalized_to_grid(refs, lvl.shape[:3]))
                    for lvl in pyramid
                ],
                axis=0,
            )
            worst = max(worst, float(np.abs(out - expected).max()))
        assert worst < 1e-10, f"max deviation {worst:.3e}"
        info["detail"] = f"200 configurations, max deviation {worst:.1e}"


def test_criterion_4_class_specificity_vs_baseline():
    with criterion(4, "class-specific maps differ; baseline map is shared") as info:
        min_gap = np.inf
        for seed in range(100):
            rng = np.random.default_rng(40_000 + seed)
            dim, classes = 6, 3
            cdl = ClassifyingDecoderLayer(dim, 2, 8, rng)
            queries = Tensor(rng.standard_normal((1, 1, classes, dim)))
            feature = Tensor(rng.standard_normal((1, 1, dim)))
            pos_query = Tensor(rng.standard_normal((1, 1, dim)))
            context = Tensor(rng.standard_normal((1, 1, 2, 2, dim)))
            pos_grid = rng.standard_normal((1, 1, 2, 2, dim)) * 0.1
            _, attn = cdl(queries, feature, pos_query, context, pos_grid)
            rows = attn.data[0, 0]
            for a, b in itertools.combinations(range(classes), 2):
                min_gap = min(min_gap, float(np.abs(rows[a] - rows[b]).max()))
        assert min_gap > 1e-8, f"closest class-map pair at L-inf {min_gap:.3e}"

        rng = np.random.default_rng(41)
        base = BaselineSharedHead(6, 3, rng)
        feature = Tensor(rng.standard_normal((2, 2, 6)))
        context = Tensor(rng.standard_normal((2, 2, 4, 6)))
        logits, attn = base(feature, context)
        scaled = BaselineSharedHead(6, 3, rng)
        for (_, p_from), (_, p_to) in zip(
            sorted(base.parameters().items()), sorted(scaled.parameters().items())
        ):
            p_to.data[:] = p_from.data
        alpha = 3.0
        scaled.class_weights.data[:, 1] *= alpha
        logits2, attn2 = scaled(feature, context)
        assert np.array_equal(attn.data, attn2.data), "baseline map moved with class weights"
        np.testing.assert_allclose(logits2.data[..., 1], alpha * logits.data[..., 1], rtol=1e-12)
        assert np.array_equal(logits2.data[..., 0], logits.data[..., 0])
        assert np.array_equal(logits2.data[..., 2], logits.data[..., 2])
        info["detail"] = f"min pairwise map gap {min_gap:.1e} over 100 seeds; rank-1 scaling exact"


def test_criterion_5_identity_cases():
    with criterion(5, "identity and no-op cases are exact") as info:
        rng = np.random.default_rng(55)

        # zero box-delta output leaves box logits bit-identical
        ldl = LocalizingDecoderLayer(4, 2, 2, 8, rng)
        assert np.all(ldl.box_delta.fc2.weight.data == 0.0)
        assert np.all(ldl.box_delta.fc2.bias.data == 0.0)
        state = ActorState(
            Tensor(rng.standard_normal((2, 2, 4))),
            Tensor(rng.standard_normal((2, 2, 4))),
        )
        levels = [Tensor(rng.standard_normal((2, 2, 2, 4))) for _ in range(2)]
        pos = rng.standard_normal((2, 2, 2, 4)) * 0.1
        result = ldl(state, levels, pos)
        assert np.array_equal(result.state.box_logits.data, state.box_logits.data)

        # unit modulation ratios reduce to the plain PE concatenation
        boxes = np.concatenate(
            [rng.uniform(0.2, 0.8, (3, 2)), rng.uniform(0.1, 0.4, (3, 2))], axis=1
        )
        box_t = Tensor(boxes)
        modulated = modulated_box_query(box_t, box_t[..., 2:], 8)
        plain = T.concat(
            [sinusoidal_encoding(box_t[..., 0], 4), sinusoidal_encoding(box_t[..., 1], 4)],
            axis=-1,
        )
        assert np.array_equal(modulated.data, plain.data)

        # one-hot aggregation returns the chosen level exactly
        levels = [Tensor(rng.standard_normal((2, 3, 3, 4))) for _ in range(3)]
        weights = np.zeros((2, 2, 3))
        weights[0, :, 1] = 1.0
        weights[1, :, 2] = 1.0
        mixed = aggregate_levels(levels, Tensor(weights)).data
        assert np.array_equal(mixed[0], levels[1].data)
        assert np.array_equal(mixed[1], levels[2].data)
        info["detail"] = "zero-delta boxes, unit-ratio modulation, one-hot levels"


def test_criterion_6_loss_and_metric_oracles():
    with criterion(6, "loss matches scalar oracle; metrics match hand PR") as info:
        rng = np.random.default_rng(66)
        cfg = MatchConfig()
        worst = 0.0
        for trial in range(100):
            gt, pred_boxes, pred_classes, conf = random_instance(rng)
            n_a = conf.shape[0]
            omega = rng.permutation(n_a)
            got = detection_loss(
                gt, Tensor(pred_boxes), Tensor(pred_classes), Tensor(conf), omega, cfg
            )
            want = ref_detection_loss(gt, pred_boxes, pred_classes, conf, omega, cfg)
            worst = max(worst, abs(float(got.data) - want))
        assert worst < 1e-9, f"max loss deviation {worst:.3e}"

        # ranked hit, miss, hit over two ground truths: AP must be 5/6
        boxes = np.zeros((2, 1, 4))
        boxes[0, 0] = (0.25, 0.25, 0.2, 0.2)
        boxes[1, 0] = (0.75, 0.75, 0.2, 0.2)
        labels = np.zeros((2, 1, 1))
        labels[:, 0, 0] = 1.0
        dets = [
            Detection(0, 0, 0, 0, 0.9, np.array([0.25, 0.25, 0.2, 0.2])),
            Detection(0, 0, 0, 0, 0.8, np.array([0.5, 0.5, 0.05, 0.05])),
            Detection(0, 0, 1, 0, 0.7, np.array([0.75, 0.75, 0.2, 0.2])),
        ]
        report = evaluate_fmap(dets, [(boxes, labels)], n_classes=1)
        assert report.fmap == pytest.approx(5.0 / 6.0, abs=1e-12)

        # single-label scores sum to the confidence
        queries = Tensor(rng.standard_normal((3, 2, 4, 8)))
        conf = Tensor(rng.uniform(0.0, 1.0, 3))
        scores = classification_head(queries, conf, single_label=True)
        sums = scores.data.sum(axis=-1)
        assert np.abs(sums - conf.data.reshape(3, 1)).max() < 1e-6
        info["detail"] = f"100 instances, max deviation {worst:.1e}; AP 5/6 exact"


def test_criterion_7_desk_scale_learning(tmp_path):
    with criterion(7, "committed config reaches f-mAP@0.5 >= 0.90") as info:
        run = load_run_config(os.path.join(REPO, "configs", "separable2.cfg"))
        assert run.train.threads == 1
        assert run.model.seed == 0
        start = time.monotonic()
        result = train(run.model, run.task, run.train, str(tmp_path))
        elapsed = time.monotonic() - start
        assert result.report.fmap >= 0.90, f"fmap {result.report.fmap:.3f} < 0.90"
        assert elapsed < 900.0, f"training took {elapsed:.0f}s, limit 900s"
        info["detail"] = (
            f"fmap {result.report.fmap:.3f} after {result.steps_run} steps, {elapsed:.0f}s"
        )


def test_criterion_8_ablation_direction(tmp_path):
    with criterion(8, "positional-query ablation completes, confusion logged") as info:
        model_cfg = ModelConfig(
            embed_dim=8, n_heads=2, n_levels=2, n_points=1, n_actors=2,
            n_enc_layers=1, n_dec_layers=1, n_classes=2, n_frames=2,
            frame_h=16, frame_w=16, grid_h=4, grid_w=4, ffn_dim=16,
            label_mode="single", seed=0,
        )
        task_cfg = TaskConfig(
            n_classes=2, frame_h=16, frame_w=16, n_frames=2,
            actor_min_frac=0.2, actor_max_frac=0.3, cue_size=2, cue_gap=1,
            n_distractors=1,
        )
        train_cfg = TrainConfig(
            steps=10, batch_size=2, n_clips=8, val_clips=4, lr=1e-3,
            warmup_steps=2, decay_milestones=(), eval_every=10, log_every=5,
            threads=1,
        )
        report = ablation_suite(
            model_cfg, task_cfg, train_cfg, str(tmp_path),
            variants=("full", "no_actor_pos"),
        )
        payload = json.loads(open(report.path).read())
        for name in ("full", "no_actor_pos"):
            variant = payload["variants"][name]
            assert "fmap" in variant
            assert "actor_confusion" in variant
        ref = payload["published_reference"]
        assert ref["fmap_with"] == PUBLISHED_REFERENCE["fmap_with"] == 33.5
        assert ref["fmap_without"] == PUBLISHED_REFERENCE["fmap_without"] == 31.7
        conf = payload["variants"]["full"]["actor_confusion"]
        info["detail"] = f"both variants trained; full-variant confusion {conf}"


def test_criterion_9_reproducibility(tmp_path):
    with criterion(9, "same seed and config give byte-identical metrics") as info:
        model_cfg = ModelConfig(
            embed_dim=8, n_heads=2, n_levels=2, n_points=1, n_actors=2,
            n_enc_layers=1, n_dec_layers=1, n_classes=2, n_frames=2,
            frame_h=16, frame_w=16, grid_h=4, grid_w=4, ffn_dim=16,
            label_mode="single", seed=3,
        )
        task_cfg = TaskConfig(
            n_classes=2, frame_h=16, frame_w=16, n_frames=2,
            actor_min_frac=0.2, actor_max_frac=0.3, cue_size=2, cue_gap=1,
            n_distractors=1,
        )
        train_cfg = TrainConfig(
            steps=40, batch_size=2, n_clips=8, val_clips=4, lr=1e-3,
            warmup_steps=4, decay_milestones=(20,), eval_every=20,
            log_every=10, threads=1,
        )
        paths = []
        for run_dir in ("a", "b"):
            out = tmp_path / run_dir
            out.mkdir()
            train(model_cfg, task_cfg, train_cfg, str(out))
            paths.append(out / "metrics.jsonl")
        first, second = (p.read_bytes() for p in paths)
        assert first == second, "metrics logs differ between identical runs"
        assert len(first) > 0
        info["detail"] = f"two runs, {len(first)} bytes each, identical"
