"""Paired-variant experiments on the actor-confusion task.

Trains the same detector several times with one architectural flag
flipped per run and reports, next to the detection score, how much of
each class-attention map leaks into the other actor's box. Every clip
pins two actors performing the same action: the one setting where a
class map that ignores which actor asked has nothing to disambiguate
by, so actor conditioning has to earn its keep.

Desk-scale deltas are logged for inspection, never asserted. The
report carries the published full-scale reference for the
positional-query ablation (33.5 with, 31.7 without) so the direction
can be compared even though the magnitudes live on different planets.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .matching import GroundTruth, MatchConfig, match
from .model import ActionDetector, ModelConfig
from .serial import load_checkpoint, read_dataset
from .synthetic import TaskConfig, to_ground_truth
from .training import TrainConfig, train

__all__ = ["VARIANTS", "PUBLISHED_REFERENCE", "AblationReport", "config_diff",
           "attention_mass_in_box", "actor_confusion", "ablation_suite"]

# one flag flipped per variant, everything else inherited
VARIANTS = {
    "full": {},
    "no_actor_pos": {"use_actor_pos": False},
    "mean_aggregation": {"aggregation": "mean"},
    "concat_fusion": {"fusion": "concat"},
}

PUBLISHED_REFERENCE = {
    "setting": "actor positional queries ablated, full-scale benchmark",
    "fmap_with": 33.5,
    "fmap_without": 31.7,
    "note": "published full-scale reference, logged for direction only; "
            "desk-scale runs are not comparable in magnitude",
}


@dataclasses.dataclass
class AblationReport:
    """Suite output: the JSON summary, its path, per-variant EvalReports."""

    path: str
    summary: dict
    reports: dict


def config_diff(a: ModelConfig, b: ModelConfig) -> dict:
    """Fields where two configs disagree, as {name: (a_value, b_value)}."""
    out = {}
    for f in dataclasses.fields(ModelConfig):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if va != vb:
            out[f.name] = (va, vb)
    return out


def attention_mass_in_box(attn_row, box, grid) -> float:
    """Sum of an attention row over grid cells whose centers fall in ``box``.

    attn_row is the flattened [H*W] map, box is normalized
    (cx, cy, w, h), grid is (H, W). Cell centers sit at
    ((g + 0.5) / extent) so the test is resolution-independent.
    """
    gh, gw = grid
    attn_row = np.asarray(attn_row, dtype=np.float64).reshape(gh, gw)
    ys = (np.arange(gh) + 0.5) / gh
    xs = (np.arange(gw) + 0.5) / gw
    cx, cy, w, h = (float(v) for v in box)
    in_y = np.abs(ys - cy) <= h / 2.0
    in_x = np.abs(xs - cx) <= w / 2.0
    return float(attn_row[np.ix_(in_y, in_x)].sum())


def actor_confusion(output, gt: GroundTruth, cfg: MatchConfig) -> float:
    """Mean fraction of class-attention mass inside a wrong actor's box.

    For each live actor (matched to its prediction slot the same way the
    loss is) and each frame, the attention row of the actor's own
    labeled class is split by grid-cell membership; the returned value
    averages wrong-box mass over actors and frames. Needs at least two
    live actors, otherwise there is no wrong box and the result is nan.
    """
    if gt.n_real < 2:
        return float("nan")
    assignment = match(gt, output.boxes, output.class_scores,
                       output.confidence, cfg)
    attn = output.class_attention.data
    fractions = []
    for i in range(gt.n_real):
        slot = int(assignment[i])
        for t in range(attn.shape[1]):
            c = int(np.argmax(gt.classes[i, t]))
            row = attn[slot, t, c]
            total = float(row.sum())
            if total <= 0.0:
                continue
            wrong = sum(attention_mass_in_box(row, gt.boxes[j, t], output.grid)
                        for j in range(gt.n_real) if j != i)
            fractions.append(wrong / total)
    return float(np.mean(fractions)) if fractions else float("nan")


def _val_confusion(cfg: ModelConfig, checkpoint_path: str, val_path: str) -> float:
    """Confusion of the trained checkpoint over its validation split."""
    arrays, _, _ = load_checkpoint(checkpoint_path)
    model = ActionDetector(cfg)
    model.load_parameters(arrays)
    values = []
    for clip in read_dataset(val_path):
        output = model(clip.frames)
        value = actor_confusion(output, to_ground_truth(clip, cfg.n_actors),
                                cfg.match)
        if np.isfinite(value):
            values.append(value)
    return float(np.mean(values)) if values else float("nan")


def ablation_suite(model_cfg: ModelConfig, task_cfg: TaskConfig,
                   train_cfg: TrainConfig, out_dir, variants=None,
                   log=None) -> AblationReport:
    """Train each variant on the two-actor same-action task and report.

    Writes ``<out_dir>/<variant>/`` training artifacts per variant plus
    a combined ``ablation.json``. The baseline ("full") always runs so
    deltas have a reference point.
    """
    if model_cfg.n_actors < 2:
        raise ValueError("ablation task needs an actor budget of at least 2")
    names = list(variants) if variants is not None else list(VARIANTS)
    unknown = sorted(set(names) - set(VARIANTS))
    if unknown:
        raise ValueError(f"unknown ablation variants: {', '.join(unknown)}")
    if "full" not in names:
        names.insert(0, "full")

    task = dataclasses.replace(task_cfg, min_actors=2, max_actors=2,
                               same_action=True).validate()
    os.makedirs(out_dir, exist_ok=True)

    full_cfg = model_cfg.validate()
    summary = {
        "task": {
            "n_actors": 2,
            "same_action": True,
            "n_classes": task.n_classes,
            "train_clips": train_cfg.n_clips,
            "val_clips": train_cfg.val_clips,
            "steps": train_cfg.steps,
        },
        "published_reference": PUBLISHED_REFERENCE,
        "variants": {},
        "deltas_vs_full": {},
    }
    reports = {}
    for name in names:
        overrides = VARIANTS[name]
        cfg = full_cfg.with_overrides(**overrides) if overrides else full_cfg
        vdir = os.path.join(out_dir, name)
        if log is not None:
            log(f"variant {name}: training")
        result = train(cfg, task, train_cfg, vdir, log=log)
        confusion = _val_confusion(cfg, result.checkpoint_path,
                                   os.path.join(vdir, "val.cvds"))
        reports[name] = result.report
        summary["variants"][name] = {
            "overrides": dict(overrides),
            "config_diff_vs_full": {k: list(v) for k, v
                                    in config_diff(full_cfg, cfg).items()},
            "fmap": result.report.fmap,
            "per_class_ap": {str(k): v for k, v
                             in sorted(result.report.per_class_ap.items())},
            "actor_confusion": confusion,
            "final_loss": result.final_loss,
        }

    full_row = summary["variants"]["full"]
    for name in names:
        if name == "full":
            continue
        row = summary["variants"][name]
        summary["deltas_vs_full"][name] = {
            "fmap": row["fmap"] - full_row["fmap"],
            "actor_confusion": row["actor_confusion"] - full_row["actor_confusion"],
        }

    path = os.path.join(out_dir, "ablation.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return AblationReport(path=path, summary=summary, reports=reports)
