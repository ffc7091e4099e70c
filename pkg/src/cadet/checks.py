"""Gradient-check batteries shared by the command line and the test suite.

Three tiers with separate tolerances, all f64 central differences:

  ops         every differentiable primitive, exhaustive coords, < 1e-5
  composites  one layer of each architectural block, < 1e-4
  end_to_end  micro model through the detection loss, < 1e-3

The classifying branch cuts the gradient on the actor feature where it
enters (a deliberate halt, not an approximation), while finite
differences feel the cut path anyway. The end-to-end tier therefore
splits: parameters upstream of the cut are probed with the
classification coefficient zeroed, so the halted path is numerically
dead; the branch's own parameters (class queries, classifying layers,
confidence head) are probed under the full loss since nothing halted
sits upstream of them. Parameters are nudged off their init point
first because zero-initialized offset heads sample exactly on grid
nodes, where trilinear interpolation has corners.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import logit
from .cdl import ClassifyingDecoderLayer
from .encoder import DeformableEncoder, MultiScaleFeatures
from .gradcheck import gradcheck
from .ldl import ActorState, LocalizingDecoderLayer
from .matching import GroundTruth, MatchConfig, detection_loss
from .model import ActionDetector, ModelConfig, ToyBackbone
from .tensor import Tensor

__all__ = ["SuiteResult", "run_suite", "op_battery", "composite_battery",
           "end_to_end_battery", "TOLERANCES"]

TOLERANCES = {"ops": 1e-5, "composites": 1e-4, "end_to_end": 1e-3}


@dataclass
class SuiteResult:
    seed: int
    sections: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def worst(self, section: str) -> float:
        values = self.sections.get(section, {})
        return max(values.values()) if values else 0.0

    @property
    def passed(self) -> bool:
        return all(self.worst(name) < tol
                   for name, tol in TOLERANCES.items()
                   if name in self.sections)

    def lines(self) -> list:
        out = []
        for name in ("ops", "composites", "end_to_end"):
            if name not in self.sections:
                continue
            tol = TOLERANCES[name]
            worst = self.worst(name)
            verdict = "ok" if worst < tol else "FAIL"
            out.append(f"{name:<12} max rel err {worst:.3e}  (tolerance {tol:.0e})  {verdict}")
            if worst >= tol:
                for check, err in sorted(self.sections[name].items()):
                    if err >= tol:
                        out.append(f"  {check}: {err:.3e}")
        out.append(f"checked seed {self.seed} in {self.elapsed:.1f}s: "
                   + ("all gradients verified" if self.passed else "FAILURES above"))
        return out


def _proj(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _away_from(rng, shape, gap=0.2, span=0.8):
    """Values whose magnitude avoids [0, gap): safe for relu kinks."""
    mag = gap + rng.uniform(0.0, span, shape)
    return mag * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)


def op_battery(rng: np.random.Generator) -> dict:
    """Exhaustive finite differences on every primitive, smooth points."""
    errs = {}

    def check(name, fn, inputs):
        errs[name] = gradcheck(fn, [Tensor(np.asarray(x, dtype=np.float64))
                                    for x in inputs])

    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    row = rng.standard_normal((1, 4))
    pa, pb = _proj(rng, (3, 4)), _proj(rng, (3, 4))

    check("add", lambda x, y: ((x + y) * pa).sum(), [a, b])
    check("add_broadcast", lambda x, y: ((x + y) * pa).sum(), [a, row])
    check("sub", lambda x, y: ((x - y) * pa).sum(), [a, b])
    check("mul", lambda x, y: ((x * y) * pa).sum(), [a, b])
    check("div", lambda x, y: ((x / y) * pa).sum(), [a, _away_from(rng, (3, 4), 0.5, 1.0)])
    check("power", lambda x: ((x ** 1.7) * pa).sum(), [rng.uniform(0.5, 1.5, (3, 4))])
    p32 = _proj(rng, (3, 2))
    check("matmul", lambda x, y: ((x @ y) * p32).sum(),
          [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
    p232 = _proj(rng, (2, 3, 2))
    check("matmul_batched", lambda x, y: ((x @ y) * p232).sum(),
          [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))])
    check("exp", lambda x: (T.exp(x) * pa).sum(), [a * 0.5])
    check("log", lambda x: (T.log(x) * pa).sum(), [rng.uniform(0.3, 2.0, (3, 4))])
    check("sin", lambda x: (T.sin(x) * pa).sum(), [a])
    check("cos", lambda x: (T.cos(x) * pa).sum(), [a])
    check("sqrt", lambda x: (T.sqrt(x) * pa).sum(), [rng.uniform(0.3, 2.0, (3, 4))])
    check("sigmoid", lambda x: (T.sigmoid(x) * pa).sum(), [a])
    check("relu", lambda x: (T.relu(x) * pa).sum(), [_away_from(rng, (3, 4))])
    check("softmax", lambda x: (T.softmax(x, axis=-1) * pa).sum(), [a])
    check("sum_all", lambda x: (x.sum() ** 2.0), [a])
    p4 = _proj(rng, (4,))
    check("sum_axis", lambda x: (T.tensor_sum(x, axis=0) * p4).sum(), [a])
    p31 = _proj(rng, (3, 1))
    check("mean_axis", lambda x: (T.tensor_mean(x, axis=1, keepdims=True)
                                  * p31).sum(), [a])
    gapped = _away_from(rng, (3, 4))
    check("maximum", lambda x, y: (T.maximum(x, y) * pa).sum(),
          [gapped, gapped + _away_from(rng, (3, 4), 0.3, 0.5)])
    check("minimum", lambda x, y: (T.minimum(x, y) * pa).sum(),
          [gapped, gapped + _away_from(rng, (3, 4), 0.3, 0.5)])
    u = rng.uniform(0.0, 0.8, (3, 4))
    interior_or_out = np.where(u < 0.4, u, u + 0.2) * np.where(
        rng.uniform(size=(3, 4)) < 0.5, -1.0, 1.0)
    check("clamp", lambda x: (T.clamp(x, -0.5, 0.5) * pa).sum(), [interior_or_out])
    p43 = _proj(rng, (4, 3))
    check("reshape", lambda x: (x.reshape((4, 3)) * p43).sum(), [a])
    check("transpose", lambda x: (T.transpose(x) * p43).sum(), [a])
    check("swapaxes", lambda x: (T.swapaxes(x, 0, 1) * p43).sum(), [a])
    check("broadcast_to", lambda x: (T.broadcast_to(x, (3, 4)) * pa).sum(), [row])
    p38 = _proj(rng, (3, 8))
    check("concat", lambda x, y: (T.concat([x, y], axis=1) * p38).sum(), [a, b])
    p234 = _proj(rng, (2, 3, 4))
    check("stack", lambda x, y: (T.stack([x, y], axis=0) * p234).sum(), [a, b])
    p22 = _proj(rng, (2, 2))
    check("getitem", lambda x: (x[1:, ::2] * p22).sum(), [a])
    check("take", lambda x: (T.take(x, np.array([2, 0, 2]), axis=0) * pb).sum(), [a])
    p46 = _proj(rng, (4, 6))
    check("pad", lambda x: (T.pad(x, [(1, 0), (0, 2)]) * p46).sum(), [a])
    patch_proj = _proj(rng, (3, 3, 2, 2, 2))
    check("extract_patches",
          lambda x: (T.extract_patches(x, 2, 2, stride=1) * patch_proj).sum(),
          [rng.standard_normal((4, 4, 2))])
    cell = rng.integers(0, 2, size=(5, 3)).astype(np.float64)
    pts = cell + rng.uniform(0.2, 0.8, (5, 3))
    p52 = _proj(rng, (5, 2))
    check("trilinear_volume",
          lambda v: (T.trilinear_sample(v, Tensor(pts)) * p52).sum(),
          [rng.standard_normal((3, 3, 3, 2))])
    check("trilinear_points",
          lambda v, p: (T.trilinear_sample(v, p) * p52).sum(),
          [rng.standard_normal((3, 3, 3, 2)), pts])
    check("layer_norm",
          lambda x, g, bta: (T.layer_norm(x, g, bta) * pa).sum(),
          [a, rng.uniform(0.5, 1.5, (4,)), rng.standard_normal((4,))])
    return errs


def composite_battery(rng: np.random.Generator) -> dict:
    """One microscopic instance of each architectural block."""
    errs = {}
    dim = 4

    bb = ToyBackbone(dim, 2, rng)
    frames = Tensor(rng.uniform(0.0, 1.0, (2, 8, 8, 3)))
    proj = [_proj(rng, (2, 4, 4, dim)), _proj(rng, (2, 2, 2, dim))]
    errs["backbone"] = gradcheck(
        lambda f: sum(((lvl * p).sum() for lvl, p in zip(bb(f), proj)),
                      start=Tensor(0.0)),
        [frames], max_coords_per_input=24, rng=rng, refine_at=1e-5)

    enc = DeformableEncoder(dim, 1, 2, 2, 2, 8, rng)
    for p in enc.parameters().values():
        p.data += rng.normal(0.0, 0.02, p.shape)
    shapes = [(2, 3, 3), (1, 2, 2)]
    data = [Tensor(rng.standard_normal(s + (dim,))) for s in shapes]
    eproj = [_proj(rng, (2, 3, 3, dim)), _proj(rng, (2, 3, 3, dim))]

    def enc_fn(x0, x1):
        out = enc(MultiScaleFeatures([x0, x1]), (2, 3, 3))
        return sum(((lvl * p).sum() for lvl, p in zip(out, eproj)),
                   start=Tensor(0.0))

    errs["deformable_encoder"] = gradcheck(enc_fn, data, max_coords_per_input=24,
                                           rng=rng, refine_at=1e-5)

    ldl = LocalizingDecoderLayer(dim, 2, 2, 8, rng)
    embed = Tensor(rng.standard_normal((2, 2, dim)))
    box_logits = Tensor(logit(rng.uniform(0.35, 0.65, (2, 2, 4))))
    levels = [Tensor(rng.standard_normal((2, 2, 2, dim))) for _ in range(2)]
    pos = rng.standard_normal((2, 2, 2, dim)) * 0.1

    def ldl_fn(e, bl, l0, l1):
        result = ldl(ActorState(e, bl), [l0, l1], pos)
        return ((result.state.embed ** 2.0).sum()
                + (result.state.box_logits ** 2.0).sum()
                + (result.actor_feature * 0.5).sum())

    errs["localizing_layer"] = gradcheck(ldl_fn, [embed, box_logits] + levels,
                                         max_coords_per_input=16, rng=rng,
                                         refine_at=1e-5)

    cdl = ClassifyingDecoderLayer(dim, 2, 8, rng)
    queries = Tensor(rng.standard_normal((2, 2, 2, dim)))
    feature = Tensor(rng.standard_normal((2, 2, dim)))
    pos_query = Tensor(rng.standard_normal((2, 2, dim)))
    context = Tensor(rng.standard_normal((2, 2, 2, 2, dim)))
    pos_grid = rng.standard_normal((2, 2, 2, dim)) * 0.1

    # The layer halts the gradient on the actor feature at entry, so the
    # feature is held constant: probing it would compare a deliberate zero
    # against the live finite-difference path through the attention weights.
    def cdl_fn(q, pq, ctx):
        out, attn = cdl(q, feature, pq, ctx, pos_grid)
        return (out ** 2.0).sum() + (attn * 0.25).sum()

    errs["classifying_layer"] = gradcheck(
        cdl_fn, [queries, pos_query, context],
        max_coords_per_input=16, rng=rng, refine_at=1e-5)
    return errs


def _micro_model(seed: int):
    cfg = ModelConfig(embed_dim=6, n_heads=2, n_levels=2, n_points=2,
                      n_actors=2, n_enc_layers=1, n_dec_layers=1, n_classes=2,
                      n_frames=2, frame_h=8, frame_w=8, grid_h=2, grid_w=2,
                      ffn_dim=8, seed=seed).validate()
    model = ActionDetector(cfg)
    rng = np.random.default_rng(seed + 77)
    for param in model.parameters().values():
        param.data += rng.normal(0.0, 0.02, param.shape)
    # Keep predicted corners strictly inside the unit square: the GIoU
    # corner clamp is straight-through (gradient 1 outside by design),
    # which finite differences cannot verify, so the probe point must
    # stay off that region.
    interior = np.concatenate([rng.uniform(0.4, 0.6, (cfg.n_actors, 2)),
                               rng.uniform(0.2, 0.3, (cfg.n_actors, 2))], axis=1)
    model.anchor_logits.data = logit(interior)
    frames = rng.uniform(0.0, 1.0, (cfg.n_frames, cfg.frame_h, cfg.frame_w, 3))
    boxes = np.zeros((cfg.n_actors, cfg.n_frames, 4))
    classes = np.zeros((cfg.n_actors, cfg.n_frames, cfg.n_classes))
    boxes[0, :, :2] = rng.uniform(0.3, 0.7, (cfg.n_frames, 2))
    boxes[0, :, 2:] = rng.uniform(0.2, 0.4, (cfg.n_frames, 2))
    classes[0, :, 0] = 1.0
    gt = GroundTruth(boxes, classes, 1)
    omega = np.arange(cfg.n_actors)
    return model, frames, gt, omega


def end_to_end_battery(rng: np.random.Generator) -> dict:
    """Micro model through the detection loss, assignment frozen."""
    errs = {}
    seed = int(rng.integers(0, 2 ** 31))
    model, frames, gt, omega = _micro_model(seed)
    params = model.parameters()
    split = ("cdl_layers", "class_queries", "conf_head")

    def loss_fn(cfg):
        def fn(*_):
            out = model(frames)
            return detection_loss(gt, out.boxes, out.class_scores,
                                  out.confidence, omega, cfg)
        return fn

    upstream = [p for name, p in sorted(params.items())
                if not name.startswith(split)]
    errs["upstream_localization"] = gradcheck(
        loss_fn(MatchConfig(lambda_class=0.0)), upstream,
        max_coords_per_input=2, rng=rng, refine_at=1e-4)

    branch = [p for name, p in sorted(params.items()) if name.startswith(split)]
    errs["classifying_branch"] = gradcheck(
        loss_fn(MatchConfig()), branch, max_coords_per_input=2, rng=rng,
        refine_at=1e-4)
    return errs


def run_suite(seed: int, include_composites: bool = True,
              include_end_to_end: bool = True) -> SuiteResult:
    start = time.monotonic()
    result = SuiteResult(seed=seed)
    result.sections["ops"] = op_battery(np.random.default_rng(seed))
    if include_composites:
        result.sections["composites"] = composite_battery(
            np.random.default_rng(seed + 1))
    if include_end_to_end:
        result.sections["end_to_end"] = end_to_end_battery(
            np.random.default_rng(seed + 2))
    result.elapsed = time.monotonic() - start
    return result
