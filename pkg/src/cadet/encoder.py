"""Multi-scale deformable self-attention over 3D feature volumes.

Each query element owns a normalized (t, y, x) reference point. Per
head and per level, small linear heads predict K sampling offsets (in
grid units of that level) and K*L mixing logits; the logits are
softmax-normalized jointly across all levels and points of a head.
Values are projected per level before sampling, which by linearity of
trilinear interpolation equals projecting each sampled vector. With the
offset and logit heads zero-initialized the operation starts as plain
multi-level interpolation at the reference points.

Level extents map normalized coordinates through
``u -> u * extent - 0.5`` (cell centers align, so the grid node i sits
at normalized (i + 0.5) / n). After the encoder stack every level is
rescaled to one common (T, H, W) grid with border-clamped trilinear
resampling, recovering the full clip length on the temporal axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Linear, LayerNorm, MLP, Module
from .tensor import Tensor

__all__ = [
    "MultiScaleFeatures",
    "level_reference_points",
    "normalized_to_grid",
    "resize_trilinear",
    "DeformableEncoderLayer",
    "DeformableEncoder",
]


class MultiScaleFeatures:
    """An ordered pyramid of [T_l, H_l, W_l, D] feature volumes."""

    def __init__(self, levels: Sequence[Tensor]):
        levels = list(levels)
        if not levels:
            raise T.ShapeError("feature pyramid needs at least one level")
        dims = {lvl.shape[-1] for lvl in levels}
        if len(dims) != 1:
            raise T.ShapeError(f"levels disagree on embed dim: {sorted(dims)}")
        for lvl in levels:
            if lvl.ndim != 4:
                raise T.ShapeError(f"level must be [T, H, W, D], got {lvl.shape}")
        self.levels = levels
        self.embed_dim = levels[0].shape[-1]

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @property
    def shapes(self):
        return [lvl.shape[:3] for lvl in self.levels]


def level_reference_points(shape, dtype=np.float64) -> np.ndarray:
    """Normalized cell-center coordinates of a [T, H, W] grid, flattened."""
    t_dim, h_dim, w_dim = shape
    ts = (np.arange(t_dim, dtype=dtype) + 0.5) / t_dim
    ys = (np.arange(h_dim, dtype=dtype) + 0.5) / h_dim
    xs = (np.arange(w_dim, dtype=dtype) + 0.5) / w_dim
    grid = np.stack(np.meshgrid(ts, ys, xs, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)


def normalized_to_grid(ref: np.ndarray, shape, dtype=np.float64) -> np.ndarray:
    """Map normalized [0,1]^3 points to grid units of a level."""
    extent = np.asarray(shape, dtype=dtype)
    return ref.astype(dtype) * extent - 0.5


def resize_trilinear(volume: Tensor, target_shape) -> Tensor:
    """Resample a [T, H, W, D] volume to ``target_shape`` (cell centers).

    Identity (same object) when the shape already matches. Coordinates
    are clamped to the border so edge cells replicate instead of fading
    into the zero padding of the underlying sampler.
    """
    t_dim, h_dim, w_dim = volume.shape[:3]
    target_shape = tuple(target_shape)
    if (t_dim, h_dim, w_dim) == target_shape:
        return volume
    ref = level_reference_points(target_shape, dtype=volume.dtype)
    coords = normalized_to_grid(ref, (t_dim, h_dim, w_dim), dtype=volume.dtype)
    coords = np.clip(coords, 0.0, np.asarray((t_dim, h_dim, w_dim), dtype=volume.dtype) - 1.0)
    out = T.trilinear_sample(volume, Tensor(coords))
    return out.reshape(target_shape + (volume.shape[-1],))


class DeformableEncoderLayer(Module):
    def __init__(self, embed_dim: int, n_heads: int, n_levels: int, n_points: int,
                 ffn_dim: int, rng: np.random.Generator, dtype=np.float64):
        if embed_dim % n_heads:
            raise T.ShapeError(f"embed_dim {embed_dim} not divisible by heads {n_heads}")
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.n_levels = n_levels
        self.n_points = n_points
        self.head_dim = embed_dim // n_heads
        # zero init: sampling starts at the reference points with uniform weights
        self.offset_head = Linear(embed_dim, n_heads * n_levels * n_points * 3, rng,
                                  zero_init=True, dtype=dtype)
        self.weight_head = Linear(embed_dim, n_heads * n_levels * n_points, rng,
                                  zero_init=True, dtype=dtype)
        self.value_proj = Linear(embed_dim, embed_dim, rng, dtype=dtype)
        self.out_proj = Linear(embed_dim, embed_dim, rng, dtype=dtype)
        self.norm_attn = LayerNorm(embed_dim, dtype=dtype)
        self.norm_ffn = LayerNorm(embed_dim, dtype=dtype)
        self.ffn = MLP(embed_dim, ffn_dim, embed_dim, rng, dtype=dtype)

    def deformable_attend(self, queries: Tensor, refs: np.ndarray,
                          features: MultiScaleFeatures) -> Tensor:
        """The attention map itself: [Q, D] queries -> [Q, D] mixed samples.

        ``refs`` are normalized reference points, one per query row.
        Exposed separately so the zero-configuration degeneracy (plain
        multi-level interpolation) can be checked directly.
        """
        n_q = queries.shape[0]
        m, lv, k = self.n_heads, self.n_levels, self.n_points
        offsets = self.offset_head(queries).reshape((n_q, m, lv, k, 3))
        logits = self.weight_head(queries).reshape((n_q, m, lv * k))
        weights = T.softmax(logits, axis=-1).reshape((n_q, m, lv, k))

        projected_levels = []
        grid_refs = []
        for level in range(lv):
            volume = features[level]
            shape = volume.shape[:3]
            projected_levels.append(self.value_proj(volume).reshape(shape + (m, self.head_dim)))
            grid_refs.append(normalized_to_grid(refs, shape, dtype=queries.dtype))  # [Q, 3]

        head_outputs = []
        for head in range(m):
            accum = None
            for level in range(lv):
                head_volume = projected_levels[level][..., head, :]
                pts = Tensor(grid_refs[level][:, None, :]) + offsets[:, head, level]  # [Q, K, 3]
                sampled = T.trilinear_sample(head_volume, pts)  # [Q, K, head_dim]
                mixed = (sampled * weights[:, head, level].unsqueeze(-1)).sum(axis=1)
                accum = mixed if accum is None else accum + mixed
            head_outputs.append(accum)
        return self.out_proj(T.concat(head_outputs, axis=-1))

    def __call__(self, features: MultiScaleFeatures, refs: np.ndarray) -> MultiScaleFeatures:
        flat = T.concat([lvl.reshape((-1, self.embed_dim)) for lvl in features], axis=0)
        attn = self.deformable_attend(flat, refs, features)
        out = self.norm_attn(flat + attn)
        out = self.norm_ffn(out + self.ffn(out))
        new_levels = []
        start = 0
        for shape in features.shapes:
            count = int(np.prod(shape))
            new_levels.append(out[start : start + count].reshape(shape + (self.embed_dim,)))
            start += count
        return MultiScaleFeatures(new_levels)


class DeformableEncoder(Module):
    """A stack of deformable layers plus rescale to one common grid."""

    def __init__(self, embed_dim: int, n_layers: int, n_heads: int, n_levels: int,
                 n_points: int, ffn_dim: int, rng, dtype=np.float64):
        self.layers = [
            DeformableEncoderLayer(embed_dim, n_heads, n_levels, n_points, ffn_dim, rng, dtype=dtype)
            for _ in range(n_layers)
        ]

    def __call__(self, features: MultiScaleFeatures, common_shape) -> list:
        """Returns the per-level encoded volumes, all at ``common_shape``."""
        refs = np.concatenate(
            [level_reference_points(shape, dtype=np.float64) for shape in features.shapes], axis=0
        )
        for layer in self.layers:
            features = layer(features, refs)
        return [resize_trilinear(lvl, common_shape) for lvl in features]
