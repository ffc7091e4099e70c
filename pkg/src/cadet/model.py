"""End-to-end detector: toy backbone, deformable encoder, alternating
localizing/classifying decoder, and the output heads.

The backbone is a small strided convolution stack standing in for a
video network; each pyramid level gets its own channel projection. The
decoder runs the localizing layer then the classifying layer once per
depth step, threading actor state (embeddings plus logit-space boxes)
and class queries forward. Confidence comes from the final actor
feature, averaged over frames, through a linear head and a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import positional_embed_3d
from .cdl import ClassifyingDecoderLayer, classification_head
from .encoder import DeformableEncoder, MultiScaleFeatures
from .ldl import ActorState, LocalizingDecoderLayer
from .matching import MatchConfig
from .nn import Conv2d, Linear, Module
from .tensor import Tensor

__all__ = ["ModelConfig", "ModelOutput", "ToyBackbone", "ActionDetector"]


@dataclass
class ModelConfig:
    """Architecture plus loss coefficients for one detector instance.

    Desk defaults; the full-scale reference configuration this scales
    down from is embed_dim=256, n_levels=4, n_points=8, n_actors=15 and
    six layers in each stack.
    """

    embed_dim: int = 64
    n_heads: int = 8
    n_levels: int = 2
    n_points: int = 4
    n_actors: int = 5
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_classes: int = 6
    n_frames: int = 4
    frame_h: int = 32
    frame_w: int = 32
    grid_h: int = 16
    grid_w: int = 16
    ffn_dim: int = 128
    label_mode: str = "multi"
    fusion: str = "sum"
    use_actor_pos: bool = True
    aggregation: str = "actor_specific"
    seed: int = 0
    match: MatchConfig = field(default_factory=MatchConfig)

    def validate(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.label_mode not in ("multi", "single"):
            raise ValueError(f"label_mode must be 'multi' or 'single', got {self.label_mode!r}")
        if self.fusion not in ("sum", "concat"):
            raise ValueError(f"fusion must be 'sum' or 'concat', got {self.fusion!r}")
        if self.aggregation not in ("actor_specific", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        for name in ("n_levels", "n_points", "n_actors", "n_enc_layers",
                     "n_dec_layers", "n_classes", "n_frames", "grid_h", "grid_w",
                     "ffn_dim", "n_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        # every backbone level halves the frame once more than the stem
        min_size = 2 ** self.n_levels
        if self.frame_h % min_size or self.frame_w % min_size:
            raise ValueError(
                f"frame size {self.frame_h}x{self.frame_w} must be divisible "
                f"by {min_size} for {self.n_levels} pyramid levels"
            )
        return self

    def with_overrides(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs).validate()


@dataclass
class ModelOutput:
    """One clip's predictions.

    boxes [N_a, T, 4] in normalized (cx, cy, w, h); class_scores
    [N_a, T, N_c] in [0, 1]; confidence [N_a]; class_attention
    [N_a, T, N_c, H*W] from the final classifying layer; actor_attention
    [N_a, T, H*W] from the final localizing layer; level_weights
    [N_a, T, L]; grid carries (H, W) for unflattening attention rows.
    """

    boxes: Tensor
    class_scores: Tensor
    confidence: Tensor
    class_attention: Tensor
    actor_attention: Tensor
    level_weights: Tensor
    grid: tuple


class ToyBackbone(Module):
    """Strided conv stack emitting one feature volume per pyramid level.

    The stem halves the frame; each further level halves it again. A
    per-level linear channel projection decouples what the encoder sees
    from the shared trunk.
    """

    def __init__(self, embed_dim: int, n_levels: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.n_levels = n_levels
        self.stem = Conv2d(3, embed_dim, 3, rng, stride=2, padding=1, dtype=dtype)
        self.down = [
            Conv2d(embed_dim, embed_dim, 3, rng, stride=2, padding=1, dtype=dtype)
            for _ in range(n_levels - 1)
        ]
        self.proj = [Linear(embed_dim, embed_dim, rng, dtype=dtype) for _ in range(n_levels)]

    def __call__(self, frames: Tensor) -> list:
        h = T.relu(self.stem(frames))
        levels = []
        for l in range(self.n_levels):
            levels.append(self.proj[l](h))
            if l < self.n_levels - 1:
                h = T.relu(self.down[l](h))
        return levels


class ActionDetector(Module):
    """Full pipeline: frames in, per-actor tubes/scores/attention out."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        cfg.validate()
        self.cfg = cfg
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        d = cfg.embed_dim
        self.backbone = ToyBackbone(d, cfg.n_levels, rng, dtype=dtype)
        self.encoder = DeformableEncoder(
            d, cfg.n_enc_layers, cfg.n_heads, cfg.n_levels, cfg.n_points,
            cfg.ffn_dim, rng, dtype=dtype,
        )
        # anchors spread over the frame interior; learning refines them
        anchors = np.stack(
            [
                rng.uniform(0.15, 0.85, cfg.n_actors),
                rng.uniform(0.15, 0.85, cfg.n_actors),
                rng.uniform(0.2, 0.45, cfg.n_actors),
                rng.uniform(0.2, 0.45, cfg.n_actors),
            ],
            axis=-1,
        )
        from .boxes import logit

        self.anchor_logits = Tensor(logit(anchors).astype(dtype), requires_grad=True)
        self.class_queries = Tensor(
            (rng.standard_normal((cfg.n_classes, d)) / np.sqrt(d)).astype(dtype),
            requires_grad=True,
        )
        self.ldl_layers = [
            LocalizingDecoderLayer(d, cfg.n_heads, cfg.n_levels, cfg.ffn_dim, rng,
                                   aggregation=cfg.aggregation, dtype=dtype)
            for _ in range(cfg.n_dec_layers)
        ]
        self.cdl_layers = [
            ClassifyingDecoderLayer(d, cfg.n_heads, cfg.ffn_dim, rng,
                                    fusion=cfg.fusion,
                                    use_actor_pos=cfg.use_actor_pos, dtype=dtype)
            for _ in range(cfg.n_dec_layers)
        ]
        self.conf_head = Linear(d, 1, rng, dtype=dtype)
        self.pos_grid = positional_embed_3d(cfg.n_frames, cfg.grid_h, cfg.grid_w,
                                            d, dtype=dtype)
        self._dtype = dtype

    def forward(self, frames) -> ModelOutput:
        cfg = self.cfg
        if not isinstance(frames, Tensor):
            frames = Tensor(np.asarray(frames, dtype=self._dtype))
        expected = (cfg.n_frames, cfg.frame_h, cfg.frame_w, 3)
        if frames.shape != expected:
            raise T.ShapeError(f"frames shape {frames.shape} != {expected}")

        features = MultiScaleFeatures(self.backbone(frames))
        enc_levels = self.encoder(features, (cfg.n_frames, cfg.grid_h, cfg.grid_w))

        embed = Tensor(np.zeros((cfg.n_actors, cfg.n_frames, cfg.embed_dim),
                                dtype=self._dtype))
        box_logits = T.broadcast_to(
            self.anchor_logits.unsqueeze(1), (cfg.n_actors, cfg.n_frames, 4)
        )
        state = ActorState(embed=embed, box_logits=box_logits)
        queries = T.broadcast_to(
            self.class_queries.reshape((1, 1, cfg.n_classes, cfg.embed_dim)),
            (cfg.n_actors, cfg.n_frames, cfg.n_classes, cfg.embed_dim),
        )

        result = None
        class_attention = None
        for ldl, cdl in zip(self.ldl_layers, self.cdl_layers):
            result = ldl(state, enc_levels, self.pos_grid)
            state = result.state
            queries, class_attention = cdl(
                queries, result.actor_feature, result.pos_query,
                result.context, self.pos_grid,
            )

        pooled = result.actor_feature.mean(axis=1)  # [N_a, D]
        confidence = T.sigmoid(self.conf_head(pooled)).reshape(-1)
        class_scores = classification_head(
            queries, confidence, single_label=(cfg.label_mode == "single")
        )
        return ModelOutput(
            boxes=state.boxes,
            class_scores=class_scores,
            confidence=confidence,
            class_attention=class_attention,
            actor_attention=result.attention,
            level_weights=result.level_weights,
            grid=(cfg.grid_h, cfg.grid_w),
        )

    __call__ = forward
