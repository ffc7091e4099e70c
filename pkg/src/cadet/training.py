"""Training loop: decoupled-weight-decay Adam, warmup plus step decay,
global-norm gradient clipping, JSON-lines metrics.

Reproducibility contract: with the same seed, config, and thread
count, two runs write byte-identical ``metrics.jsonl`` files. Wall
times go to a separate ``timings.jsonl`` so the metrics log carries
only deterministic fields.

A non-finite loss aborts the run: diagnostics counters and the last
few metric rows are snapshotted to ``abort.json`` and NumericalAbort
propagates (the command line maps it to exit code 2).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import diagnostics
from .evaluation import EvalReport, collect_detections, evaluate_fmap
from .matching import GroundTruth, detection_loss, match
from .model import ActionDetector, ModelConfig
from .serial import read_dataset, save_checkpoint, write_dataset
from .synthetic import TaskConfig, make_dataset, to_ground_truth
from .tensor import Tensor

__all__ = ["TrainConfig", "TrainResult", "NumericalAbort", "AdamW",
           "lr_at", "clip_grad_norm", "train", "evaluate_model"]


class NumericalAbort(RuntimeError):
    """Loss or gradients left the finite range; training cannot continue."""


@dataclass
class TrainConfig:
    steps: int = 400
    batch_size: int = 4
    n_clips: int = 64
    val_clips: int = 16
    lr: float = 2e-3
    weight_decay: float = 1e-4
    warmup_steps: int = 25
    decay_milestones: tuple = ()
    decay_factor: float = 0.1
    clip_norm: float = 5.0
    eval_every: int = 0
    log_every: int = 10
    threads: int = 1
    iou_thresh: float = 0.5

    def validate(self):
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps, batch_size and log_every must be >= 1")
        if self.n_clips < 1 or self.val_clips < 1:
            raise ValueError("need at least one training and one validation clip")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if list(self.decay_milestones) != sorted(set(self.decay_milestones)):
            raise ValueError("decay_milestones must be strictly increasing")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")
        if self.eval_every < 0 or self.threads < 1:
            raise ValueError("eval_every must be >= 0 and threads >= 1")
        return self

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass
class TrainResult:
    checkpoint_path: str
    metrics_path: str
    report: EvalReport
    final_loss: float
    steps_run: int


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    The decay multiplies parameters directly by lr * weight_decay per
    step instead of entering the gradient moments.
    """

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = sorted(params.items())
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in self.params}
        self._v = {name: np.zeros_like(t.data) for name, t in self.params}

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def step(self, lr: float = None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            t.data = t.data - lr * (update + self.weight_decay * t.data)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based step: linear warmup to cfg.lr, then
    multiply by decay_factor at each passed milestone."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    passed = sum(1 for m in cfg.decay_milestones if step >= m)
    return cfg.lr * cfg.decay_factor ** passed


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm. max_norm 0 only measures.
    """
    total = 0.0
    grads = [t.grad for _, t in sorted(params.items()) if t.grad is not None]
    for g in grads:
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def _f(x: float) -> float:
    """Round for the log so the JSON stays readable; 12 significant
    digits is far below any tolerance the logs are compared at."""
    return float(f"{x:.12g}")


def _clip_loss(model, clip, match_cfg, terms: dict = None):
    output = model(clip.frames)
    gt = to_ground_truth(clip, model.cfg.n_actors)
    omega = match(gt, output.boxes, output.class_scores, output.confidence,
                  match_cfg)
    loss = detection_loss(gt, output.boxes, output.class_scores,
                          output.confidence, omega, match_cfg, terms=terms)
    return loss


def evaluate_model(model, clips, n_classes: int, label_mode: str,
                   iou_thresh: float = 0.5, with_entropy: bool = False) -> EvalReport:
    """Run the model over clips and score frame-level detection."""
    detections = []
    gts = []
    entropy_attn = []
    for k, clip in enumerate(clips):
        output = model(clip.frames)
        detections.extend(collect_detections(output, k, label_mode=label_mode))
        gts.append((clip.boxes, clip.labels))
        if with_entropy:
            entropy_attn.append(output.class_attention.data)
    report = evaluate_fmap(detections, gts, n_classes=n_classes,
                           iou_thresh=iou_thresh)
    if with_entropy:
        from .evaluation import attention_entropy
        report.attention_entropy = attention_entropy(np.concatenate(entropy_attn))
    return report


def train(model_cfg: ModelConfig, task_cfg: TaskConfig, train_cfg: TrainConfig,
          out_dir, flat_config: dict = None, log=None) -> TrainResult:
    """Train a fresh model on generated clips; write artifacts to out_dir.

    Artifacts: ``val.cvds`` (the validation split, evaluated from its
    own read-back), ``metrics.jsonl``, ``timings.jsonl``,
    ``model.cadt``, ``report.json``.
    """
    model_cfg.validate()
    task_cfg.validate()
    train_cfg.validate()
    os.makedirs(out_dir, exist_ok=True)

    model = ActionDetector(model_cfg)
    seeds = np.random.SeedSequence(model_cfg.seed).generate_state(2)
    train_clips = make_dataset(task_cfg, train_cfg.n_clips, seed=int(seeds[0]),
                               threads=train_cfg.threads)
    val_path = os.path.join(out_dir, "val.cvds")
    write_dataset(val_path, make_dataset(task_cfg, train_cfg.val_clips,
                                         seed=int(seeds[1]),
                                         threads=train_cfg.threads))
    val_clips = read_dataset(val_path)

    params = model.parameters()
    opt = AdamW(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    timings_path = os.path.join(out_dir, "timings.jsonl")
    recent = []
    report = None
    final_loss = float("nan")
    t_start = time.monotonic()

    with open(metrics_path, "w") as mfh, open(timings_path, "w") as tfh:
        def emit(row: dict):
            line = json.dumps(row, sort_keys=True)
            mfh.write(line + "\n")
            mfh.flush()
            recent.append(row)
            del recent[:-8]
            if log is not None:
                log(line)

        for step in range(train_cfg.steps):
            lr = lr_at(step, train_cfg)
            base = step * train_cfg.batch_size
            terms_sum = {"class": 0.0, "box": 0.0, "giou": 0.0, "conf": 0.0}
            losses = []
            for k in range(train_cfg.batch_size):
                clip = train_clips[(base + k) % len(train_clips)]
                terms = {}
                losses.append(_clip_loss(model, clip, model_cfg.match, terms))
                for key in terms_sum:
                    terms_sum[key] += terms[key]
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            loss = loss * (1.0 / train_cfg.batch_size)

            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                snapshot = {
                    "step": step,
                    "loss": repr(loss_value),
                    "lr": lr,
                    "counters": dict(diagnostics.counters),
                    "recent_metrics": recent,
                }
                with open(os.path.join(out_dir, "abort.json"), "w") as fh:
                    json.dump(snapshot, fh, indent=2, sort_keys=True, default=str)
                raise NumericalAbort(f"non-finite loss {loss_value!r} at step {step}")

            opt.zero_grad()
            loss.backward()
            grad_norm = clip_grad_norm(params, train_cfg.clip_norm)
            opt.step(lr=lr)
            final_loss = loss_value

            last = step == train_cfg.steps - 1
            if step % train_cfg.log_every == 0 or last:
                emit({"step": step, "loss": _f(loss_value),
                      "loss_class": _f(terms_sum["class"] / train_cfg.batch_size),
                      "loss_box": _f(terms_sum["box"] / train_cfg.batch_size),
                      "loss_giou": _f(terms_sum["giou"] / train_cfg.batch_size),
                      "loss_conf": _f(terms_sum["conf"] / train_cfg.batch_size),
                      "lr": _f(lr), "grad_norm": _f(grad_norm)})
                tfh.write(json.dumps({"step": step,
                                      "wall_time": time.monotonic() - t_start},
                                     sort_keys=True) + "\n")
                tfh.flush()
            if (train_cfg.eval_every and step % train_cfg.eval_every == 0
                    and step > 0) or last:
                report = evaluate_model(model, val_clips, model_cfg.n_classes,
                                        model_cfg.label_mode,
                                        iou_thresh=train_cfg.iou_thresh)
                emit({"step": step, "fmap": _f(report.fmap),
                      "per_class_ap": {str(c): _f(a) for c, a
                                       in sorted(report.per_class_ap.items())}})

    checkpoint_path = os.path.join(out_dir, "model.cadt")
    save_checkpoint(checkpoint_path, params, step=train_cfg.steps,
                    config=flat_config or {})
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return TrainResult(checkpoint_path=checkpoint_path,
                       metrics_path=metrics_path, report=report,
                       final_loss=final_loss, steps_run=train_cfg.steps)
