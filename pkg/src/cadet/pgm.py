"""Attention-map export as binary PGM images.

PGM (P5) is the simplest image format a text editor and ``xdg-open``
both understand: an ASCII header then raw 8-bit rows. Dumps use one
file per (actor, class, frame) so the per-class separation of the
attention maps is visible file-by-file, named
``actor{i}_class{c}_t{t}.pgm``.

An optional color overlay (attention heat over the input frame)
renders through Pillow when it is installed; the library itself never
imports it at module scope.
"""

from __future__ import annotations

import os
import re

import numpy as np

__all__ = ["write_pgm", "read_pgm", "quantize", "dump_attention",
           "write_overlay_png"]

_NAME = "actor{i}_class{c}_t{t}.pgm"


def quantize(a: np.ndarray) -> np.ndarray:
    """Map a non-negative map to u8 by round(255 * a / max(a)).

    An all-zero map stays all zero instead of dividing by zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0 or not np.all(np.isfinite(a)) or a.min() < 0:
        raise ValueError("attention map must be finite and non-negative")
    peak = a.max()
    if peak == 0.0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.round(255.0 * a / peak).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"expected a 2-d uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not m:
        raise ValueError(f"{path} is not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    if len(blob) - m.end() < h * w:
        raise ValueError(f"{path} is truncated")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=m.end(), count=h * w)
    return pixels.reshape(h, w).copy()


def dump_attention(out_dir, class_attention: np.ndarray, grid: tuple) -> dict:
    """Write one PGM per (actor, class, frame).

    ``class_attention`` is [N_a, T, N_c, H*W] of non-negative weights;
    ``grid`` is (H, W). Returns {filename: quantized image} exactly as
    written, so callers can verify the files round-trip.
    """
    attn = np.asarray(class_attention, dtype=np.float64)
    if attn.ndim != 4:
        raise ValueError(f"expected [N_a, T, N_c, H*W], got shape {attn.shape}")
    h, w = grid
    if attn.shape[-1] != h * w:
        raise ValueError(f"grid {grid} does not match attention row length {attn.shape[-1]}")
    os.makedirs(out_dir, exist_ok=True)
    n_actors, n_frames, n_classes, _ = attn.shape
    written = {}
    for i in range(n_actors):
        for c in range(n_classes):
            for t in range(n_frames):
                name = _NAME.format(i=i, c=c, t=t)
                image = quantize(attn[i, t, c].reshape(h, w))
                write_pgm(os.path.join(out_dir, name), image)
                written[name] = image
    return written


def write_overlay_png(path, frame: np.ndarray, attention: np.ndarray) -> bool:
    """Blend an attention map over an RGB frame and save a PNG.

    Needs Pillow; returns False (writing nothing) when it is missing
    so plain installs lose only the pretty picture.
    """
    try:
        from PIL import Image
    except ImportError:
        return False
    frame = np.asarray(frame, dtype=np.float64)
    heat = np.asarray(attention, dtype=np.float64)
    if heat.shape != frame.shape[:2]:
        # nearest-neighbour upsample of the coarse attention grid
        ry = frame.shape[0] // heat.shape[0]
        rx = frame.shape[1] // heat.shape[1]
        if ry < 1 or rx < 1 or heat.shape[0] * ry != frame.shape[0] \
                or heat.shape[1] * rx != frame.shape[1]:
            raise ValueError(f"attention {heat.shape} does not tile frame {frame.shape[:2]}")
        heat = np.repeat(np.repeat(heat, ry, axis=0), rx, axis=1)
    peak = heat.max()
    if peak > 0:
        heat = heat / peak
    overlay = frame.copy()
    overlay[..., 0] = np.clip(frame[..., 0] * 0.5 + heat * 0.5, 0.0, 1.0)
    Image.fromarray(np.round(overlay * 255.0).astype(np.uint8), mode="RGB").save(path)
    return True
