"""Classifying decoder layer: one attention map per action class.

Class queries (one learned row per class, threaded layer to layer)
cross-attend into a per-actor key volume built by fusing the actor
feature into its aggregated context and convolving the result. Queries
ride with the actor's positional query, keys with the grid positional
embedding, and values are the raw actor context. The per-class
attention rows are the point of the design: where a single shared map
must serve every class, these maps may concentrate on class-relevant
evidence anywhere in the frame, not only on the actor box.

Gradients are halted on the actor feature at entry, so classification
cannot drag the localization branch.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import MultiHeadAttention
from .nn import Conv2d, LayerNorm, Linear, MLP, Module
from .tensor import Tensor

__all__ = [
    "ClassifyingDecoderLayer",
    "classification_head",
    "BaselineSharedHead",
]


class ClassifyingDecoderLayer(Module):
    def __init__(self, embed_dim: int, n_heads: int, ffn_dim: int, rng: np.random.Generator,
                 fusion: str = "sum", use_actor_pos: bool = True, dtype=np.float64):
        if fusion not in ("sum", "concat"):
            raise ValueError(f"unknown fusion mode '{fusion}'")
        self.embed_dim = embed_dim
        self.fusion = fusion
        self.use_actor_pos = use_actor_pos
        self.feature_ffn = MLP(embed_dim, ffn_dim, embed_dim, rng, dtype=dtype)
        if fusion == "concat":
            self.fuse_proj = Linear(2 * embed_dim, embed_dim, rng, dtype=dtype)
        self.conv1 = Conv2d(embed_dim, embed_dim, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(embed_dim, embed_dim, 3, rng, padding=1, dtype=dtype)
        self.class_self_attn = MultiHeadAttention(embed_dim, embed_dim, embed_dim,
                                                  embed_dim, n_heads, rng, dtype=dtype)
        query_dim = 2 * embed_dim if use_actor_pos else embed_dim
        self.cross_attn = MultiHeadAttention(query_dim, 2 * embed_dim, embed_dim,
                                             embed_dim, n_heads, rng, dtype=dtype)
        self.ffn = MLP(embed_dim, ffn_dim, embed_dim, rng, dtype=dtype)
        self.norm_self = LayerNorm(embed_dim, dtype=dtype)
        self.norm_cross = LayerNorm(embed_dim, dtype=dtype)
        self.norm_ffn = LayerNorm(embed_dim, dtype=dtype)

    def fuse_context(self, actor_feature: Tensor, context: Tensor) -> Tensor:
        """Broadcast the (refined, detached) actor feature over its context
        grid and convolve twice: [N_a, T, H, W, D] key volume."""
        refined = self.feature_ffn(actor_feature.detach())
        spread = refined.unsqueeze(2).unsqueeze(3)
        if self.fusion == "sum":
            fused = context + spread
        else:
            spread = T.broadcast_to(spread, context.shape)
            fused = self.fuse_proj(T.concat([context, spread], axis=-1))
        return self.conv2(T.relu(self.conv1(fused)))

    def __call__(self, queries: Tensor, actor_feature: Tensor, pos_query: Tensor,
                 context: Tensor, pos_grid: np.ndarray):
        """queries [N_a, T, N_c, D] -> (updated queries, attention maps
        [N_a, T, N_c, HW])."""
        n_actors, t_dim, n_classes, dim = queries.shape
        grid = context.shape[2] * context.shape[3]

        key_volume = self.fuse_context(actor_feature, context)
        z_flat = key_volume.reshape((n_actors, t_dim, grid, dim))
        ctx_flat = context.reshape((n_actors, t_dim, grid, dim))

        sa_out, _ = self.class_self_attn(queries, queries, queries)
        q = self.norm_self(queries + sa_out)

        pos_flat = Tensor(pos_grid.reshape(1, t_dim, grid, dim))
        keys = T.concat([z_flat, T.broadcast_to(pos_flat, z_flat.shape)], axis=-1)
        if self.use_actor_pos:
            actor_pos = T.broadcast_to(pos_query.unsqueeze(2), q.shape)
            attend_q = T.concat([q, actor_pos], axis=-1)
        else:
            attend_q = q
        ca_out, attn = self.cross_attn(attend_q, keys, ctx_flat)

        h = self.norm_cross(q + ca_out)
        # The FFN sub-block is pre-norm: the head reads a channel mean, and
        # a layer-normalized output has zero channel mean by construction,
        # which would pin every logit to zero and block the gradient.
        q_out = h + self.ffn(self.norm_ffn(h))
        return q_out, attn


def classification_head(queries: Tensor, confidence: Tensor, single_label: bool = False) -> Tensor:
    """Scores from final class queries: channel mean, then squashing.

    Multi-label: sigmoid of the per-class channel means. Single-label:
    softmax across classes scaled by the actor confidence, so a zero
    confidence collapses the whole score vector to zero.
    Shapes: queries [N_a, T, N_c, D], confidence [N_a] -> [N_a, T, N_c].
    """
    logits = queries.mean(axis=-1)
    if single_label:
        conf = confidence.reshape((-1, 1, 1))
        return T.softmax(logits, axis=-1) * conf
    return T.sigmoid(logits)


class BaselineSharedHead(Module):
    """Single shared attention map with a linear class read-out.

    One attention row per (actor, frame) pools the context; class logits
    are a bias-free linear map of the pooled vector. Every class shares
    the same map by construction, and scaling one read-out row scales
    exactly that class logit and nothing else.
    """

    def __init__(self, embed_dim: int, n_classes: int, rng, dtype=np.float64):
        self.embed_dim = embed_dim
        self.w_q = Linear(embed_dim, embed_dim, rng, dtype=dtype)
        self.w_k = Linear(embed_dim, embed_dim, rng, dtype=dtype)
        self.w_v = Linear(embed_dim, embed_dim, rng, dtype=dtype)
        scale = 1.0 / np.sqrt(embed_dim)
        self.class_weights = Tensor(
            (rng.standard_normal((embed_dim, n_classes)) * scale).astype(dtype),
            requires_grad=True,
        )

    def __call__(self, actor_feature: Tensor, context: Tensor):
        """f [N_a, T, D], context [N_a, T, HW, D] ->
        (logits [N_a, T, N_c], attention [N_a, T, HW])."""
        n_actors, t_dim, dim = actor_feature.shape
        q = self.w_q(actor_feature).unsqueeze(2)          # [N_a, T, 1, D]
        k = self.w_k(context)
        logits = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dim))
        attn = T.softmax(logits, axis=-1)                 # [N_a, T, 1, HW]
        pooled = (attn @ self.w_v(context)).reshape((n_actors, t_dim, dim))
        class_logits = pooled.reshape((-1, dim)) @ self.class_weights
        return class_logits.reshape((n_actors, t_dim, -1)), attn.reshape((n_actors, t_dim, -1))
