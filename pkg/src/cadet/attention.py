"""Scaled dot-product attention and sinusoidal positional machinery.

Covers the shared pieces the decoder layers are built from: multi-head
attention that also returns its (head-averaged) attention map, the
sinusoidal encoding of scalar coordinates, the 3D grid embedding used
as key positions, and size-modulated box positional queries.
"""

from __future__ import annotations

import numpy as np

from . import diagnostics
from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor

__all__ = [
    "sinusoidal_encoding",
    "positional_embed_3d",
    "MultiHeadAttention",
    "BoxModulator",
    "modulated_box_query",
]

_TEMPERATURE = 10000.0


def sinusoidal_encoding(x, dim: int) -> Tensor:
    """Map scalars in [0, 1] to ``dim`` interleaved sin/cos features.

    angle_k = 2*pi*x / temperature^(2k/dim); values are bounded in
    [-1, 1] and the lowest frequency makes the map injective on [0, 1).
    Differentiable in x, so it can ride on learned box coordinates.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    n_freq = (dim + 1) // 2
    k = np.arange(n_freq, dtype=np.float64)
    freqs = (2.0 * np.pi) / _TEMPERATURE ** (2.0 * k / dim)
    angles = x.unsqueeze(-1) * Tensor(freqs.astype(x.dtype))
    interleaved = T.stack([T.sin(angles), T.cos(angles)], axis=-1)
    out = interleaved.reshape(x.shape + (2 * n_freq,))
    if 2 * n_freq != dim:
        out = out[..., :dim]
    return out


def positional_embed_3d(t_dim: int, h_dim: int, w_dim: int, dim: int,
                        dtype=np.float64) -> np.ndarray:
    """Constant [T, H, W, dim] embedding of grid cell centers.

    dim is split into three dim//3 blocks for (t, y, x); the remainder
    is zero padded. Grid cell i gets normalized coordinate (i+0.5)/n.
    """
    block = dim // 3
    out = np.zeros((t_dim, h_dim, w_dim, dim), dtype=dtype)
    if block == 0:
        return out
    with T.no_grad():
        for axis, (n, slot) in enumerate(((t_dim, 0), (h_dim, 1), (w_dim, 2))):
            coords = (np.arange(n, dtype=dtype) + 0.5) / n
            enc = sinusoidal_encoding(Tensor(coords), block).data
            shape = [1, 1, 1, block]
            shape[axis] = n
            start = slot * block
            out[..., start : start + block] += enc.reshape(shape)
    return out


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention.

    Query and key inputs may have different widths (both are projected
    to ``model_dim``); values are projected from ``value_dim``. The
    returned attention map is averaged over heads and row-stochastic.
    """

    def __init__(self, query_dim: int, key_dim: int, value_dim: int, model_dim: int,
                 n_heads: int, rng: np.random.Generator, dtype=np.float64):
        if model_dim % n_heads:
            raise T.ShapeError(f"model_dim {model_dim} not divisible by heads {n_heads}")
        self.n_heads = n_heads
        self.model_dim = model_dim
        self.head_dim = model_dim // n_heads
        self.w_q = Linear(query_dim, model_dim, rng, dtype=dtype)
        self.w_k = Linear(key_dim, model_dim, rng, dtype=dtype)
        self.w_v = Linear(value_dim, model_dim, rng, dtype=dtype)
        self.w_out = Linear(model_dim, model_dim, rng, dtype=dtype)

    def _split_heads(self, x: Tensor) -> Tensor:
        # [..., n, model] -> [..., heads, n, head_dim]
        lead = x.shape[:-2]
        n = x.shape[-2]
        x = x.reshape(lead + (n, self.n_heads, self.head_dim))
        return x.swapaxes(-3, -2)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor):
        """[..., n_q, d_q] x [..., n_k, d_k] x [..., n_k, d_v] ->
        (output [..., n_q, model_dim], attention [..., n_q, n_k])."""
        if query.shape[:-2] != key.shape[:-2] or key.shape[-2] != value.shape[-2]:
            raise T.ShapeError(
                f"attend shape mismatch: query {query.shape}, key {key.shape}, value {value.shape}"
            )
        q = self._split_heads(self.w_q(query))
        k = self._split_heads(self.w_k(key))
        v = self._split_heads(self.w_v(value))
        logits = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        attn = T.softmax(logits, axis=-1)
        mixed = attn @ v  # [..., heads, n_q, head_dim]
        lead = mixed.shape[:-3]
        n_q = mixed.shape[-2]
        merged = mixed.swapaxes(-3, -2).reshape(lead + (n_q, self.model_dim))
        out = self.w_out(merged)
        return out, attn.mean(axis=-3)


def modulated_box_query(box: Tensor, ref_wh: Tensor, dim: int,
                        size_eps: float = 1e-4) -> Tensor:
    """Positional query for a box, rescaled by reference/actual size.

    Concatenates PE(cx) * ref_w / w and PE(cy) * ref_h / h, each half
    ``dim // 2`` wide. With unit ratios (ref_wh equal to the box size)
    this reduces exactly to the plain PE concatenation. Box sizes are
    clamped at ``size_eps`` (counted in diagnostics) so the ratio stays
    finite for collapsed boxes.
    """
    half = dim // 2
    pe_x = sinusoidal_encoding(box[..., 0], half)
    pe_y = sinusoidal_encoding(box[..., 1], half)
    w = box[..., 2]
    h = box[..., 3]
    n_clamped = int(np.sum(w.data < size_eps) + np.sum(h.data < size_eps))
    diagnostics.bump("box_modulate.size_clamp", n_clamped)
    w = T.clamp(w, size_eps, None)
    h = T.clamp(h, size_eps, None)
    scale_x = (ref_wh[..., 0] / w).unsqueeze(-1)
    scale_y = (ref_wh[..., 1] / h).unsqueeze(-1)
    return T.concat([pe_x * scale_x, pe_y * scale_y], axis=-1)


class BoxModulator(Module):
    """Produces size-modulated positional queries from boxes and embeddings.

    The reference size (ref_w, ref_h) is predicted from the actor
    embedding by a single affine layer squashed to (0, 2); zero weights
    therefore start at ref = 1, a neutral prior for unit-ratio boxes.
    """

    def __init__(self, embed_dim: int, rng, dtype=np.float64):
        self.embed_dim = embed_dim
        self.fc = Linear(embed_dim, 2, rng, dtype=dtype)

    def reference_size(self, embed: Tensor) -> Tensor:
        return T.sigmoid(self.fc(embed)) * 2.0

    def __call__(self, box: Tensor, embed: Tensor) -> Tensor:
        return modulated_box_query(box, self.reference_size(embed), self.embed_dim)
