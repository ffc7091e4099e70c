"""Localizing decoder layer: track actors and refine their tubes.

Per layer and per frame, actor embeddings exchange information through
self-attention (queries and keys carry box positional encodings), each
actor then aggregates its own weighted mix of encoder levels, and a
single cross-attention row per (actor, frame) reads from that actor
context. The actor feature handed to the classification branch is
tapped after the cross-attention residual but before the feedforward
block. Boxes live in logit space between layers; a layer refines them
by adding a zero-initialized feedforward delta, so an untrained layer
is exactly the identity on boxes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import BoxModulator, MultiHeadAttention, sinusoidal_encoding
from .nn import LayerNorm, Linear, MLP, Module
from .tensor import Tensor

__all__ = ["ActorState", "LDLResult", "LocalizingDecoderLayer", "refine_box", "aggregate_levels"]


@dataclass
class ActorState:
    """Per-actor decoder state: embeddings [N_a, T, D], boxes as logits."""

    embed: Tensor       # [N_a, T, D]
    box_logits: Tensor  # [N_a, T, 4]

    @property
    def boxes(self) -> Tensor:
        return T.sigmoid(self.box_logits)


@dataclass
class LDLResult:
    state: ActorState
    actor_feature: Tensor   # f, [N_a, T, D], tapped before the FFN
    pos_query: Tensor       # P, [N_a, T, D]
    context: Tensor         # x, [N_a, T, H, W, D]
    level_weights: Tensor   # [N_a, T, L]
    attention: Tensor       # [N_a, T, HW]


def refine_box(box: Tensor, delta: Tensor, eps: float = 1e-4) -> Tensor:
    """Additive update in logit space: sigmoid(delta + logit(box)).

    Inputs are clamped to [eps, 1 - eps] before the inverse sigmoid;
    outputs are strictly inside (0, 1). A zero delta is a no-op up to
    the sigmoid/logit round trip (the decoder itself keeps boxes in
    logit form between layers, where zero deltas are exactly identity).
    """
    box = T.clamp(box, eps, 1.0 - eps)
    logits = T.log(box) - T.log(1.0 - box)
    return T.sigmoid(delta + logits)


def aggregate_levels(levels, weights: Tensor) -> Tensor:
    """Per-actor mix of encoder levels: sum_l w[..., l] * levels[l].

    ``levels`` is a list of [T, H, W, D] volumes shared by all actors;
    ``weights`` is [N_a, T, L] and broadcasts over the spatial grid. A
    one-hot weight row returns the chosen level exactly.
    """
    n_actors, t_dim, n_levels = weights.shape
    out = None
    for l, level in enumerate(levels):
        w = weights[:, :, l].reshape((n_actors, t_dim, 1, 1, 1))
        term = level.unsqueeze(0) * w
        out = term if out is None else out + term
    return out


class LocalizingDecoderLayer(Module):
    def __init__(self, embed_dim: int, n_heads: int, n_levels: int, ffn_dim: int,
                 rng: np.random.Generator, aggregation: str = "actor_specific",
                 dtype=np.float64):
        if aggregation not in ("actor_specific", "mean"):
            raise ValueError(f"unknown aggregation mode '{aggregation}'")
        self.embed_dim = embed_dim
        self.n_levels = n_levels
        self.aggregation = aggregation
        self.modulator = BoxModulator(embed_dim, rng, dtype=dtype)
        self.self_attn = MultiHeadAttention(2 * embed_dim, 2 * embed_dim, embed_dim,
                                            embed_dim, n_heads, rng, dtype=dtype)
        self.level_mlp = MLP(embed_dim, embed_dim, n_levels, rng, dtype=dtype)
        self.cross_attn = MultiHeadAttention(2 * embed_dim, 2 * embed_dim, embed_dim,
                                             embed_dim, n_heads, rng, dtype=dtype)
        self.ffn = MLP(embed_dim, ffn_dim, embed_dim, rng, dtype=dtype)
        self.box_delta = MLP(embed_dim, ffn_dim, 4, rng, zero_init_out=True, dtype=dtype)
        self.norm_self = LayerNorm(embed_dim, dtype=dtype)
        self.norm_cross = LayerNorm(embed_dim, dtype=dtype)
        self.norm_ffn = LayerNorm(embed_dim, dtype=dtype)

    def __call__(self, state: ActorState, enc_levels, pos_grid: np.ndarray) -> LDLResult:
        """One decoding step.

        enc_levels: list of [T, H, W, D] encoded volumes on the common
        grid. pos_grid: constant [T, H, W, D] positional embedding of
        that grid.
        """
        embed = state.embed
        n_actors, t_dim, dim = embed.shape
        boxes = state.boxes

        # positional queries come from the embedding before self-attention
        pos_query = self.modulator(boxes, embed)

        # self-attention across actors, one frame at a time (batch axis T)
        half = dim // 2
        pe_box = T.concat(
            [sinusoidal_encoding(boxes[..., 0], half),
             sinusoidal_encoding(boxes[..., 1], dim - half)],
            axis=-1,
        )
        qk = T.concat([embed, pe_box], axis=-1).swapaxes(0, 1)  # [T, N_a, 2D]
        sa_out, _ = self.self_attn(qk, qk, embed.swapaxes(0, 1))
        embed = self.norm_self(embed + sa_out.swapaxes(0, 1))

        # actor-specific aggregation of encoder levels ("mean" pools the
        # levels uniformly instead, the ablation baseline)
        if self.aggregation == "mean":
            uniform = np.full((n_actors, t_dim, self.n_levels), 1.0 / self.n_levels,
                              dtype=embed.dtype)
            level_weights = Tensor(uniform)
        else:
            level_weights = T.softmax(self.level_mlp(embed), axis=-1)
        context = aggregate_levels(enc_levels, level_weights)  # [N_a, T, H, W, D]
        grid = context.shape[2] * context.shape[3]
        ctx_flat = context.reshape((n_actors, t_dim, grid, dim))

        # one query row per (actor, frame) against its own context
        pos_flat = Tensor(pos_grid.reshape(1, t_dim, grid, dim))
        keys = T.concat([ctx_flat, T.broadcast_to(pos_flat, ctx_flat.shape)], axis=-1)
        query = T.concat([embed, pos_query], axis=-1).unsqueeze(2)  # [N_a, T, 1, 2D]
        ca_out, attn = self.cross_attn(query, keys, ctx_flat)
        actor_feature = self.norm_cross(embed + ca_out.reshape((n_actors, t_dim, dim)))

        out_embed = self.norm_ffn(actor_feature + self.ffn(actor_feature))
        new_logits = state.box_logits + self.box_delta(out_embed)

        return LDLResult(
            state=ActorState(embed=out_embed, box_logits=new_logits),
            actor_feature=actor_feature,
            pos_query=pos_query,
            context=context,
            level_weights=level_weights,
            attention=attn.reshape((n_actors, t_dim, grid)),
        )
