"""Binary file formats: the clip dataset and the model checkpoint.

Both formats are versioned, magic-tagged, and endianness-fixed
(everything little-endian) so files written on one machine read back
identically on another.

Dataset (``.cvds``): after an 8-byte file header (magic ``CVDS`` +
u32 version) each clip is one self-describing record::

    u32 x 5     T, H, W, N_X, N_c
    u8  x T*H*W*3    frames, row-major, round(255 * value)
    f32 x N_X*T*4    ground-truth tubes, normalized (cx, cy, w, h)
    u8  x N_X*T*ceil(N_c/8)   per-frame label bitmaps, LSB-first

Records repeat until end of file; a partial record is a corruption
error, not a silent stop.

Checkpoint (``.cadt``): magic ``CADT`` + u32 version + u64 header
length + a UTF-8 JSON header ``{"step", "config", "tensors": [{"name",
"shape"}, ...]}`` followed by one raw little-endian f32 buffer per
tensor, in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .synthetic import SyntheticClip

__all__ = ["FormatError", "DATASET_MAGIC", "DATASET_VERSION",
           "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION",
           "write_dataset", "read_dataset",
           "save_checkpoint", "load_checkpoint"]

DATASET_MAGIC = b"CVDS"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"CADT"
CHECKPOINT_VERSION = 1

_RECORD_HEADER = struct.Struct("<5I")


class FormatError(ValueError):
    """Raised when a file does not parse as the expected format."""


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes for {what}, got {len(buf)}")
    return buf


def _check_header(fh, magic: bytes, version: int, kind: str):
    got = _read_exact(fh, 4, f"{kind} magic")
    if got != magic:
        raise FormatError(f"bad {kind} magic {got!r}, expected {magic!r}")
    (ver,) = struct.unpack("<I", _read_exact(fh, 4, f"{kind} version"))
    if ver != version:
        raise FormatError(f"unsupported {kind} version {ver}, expected {version}")


def write_dataset(path, clips) -> None:
    """Write clips to ``path`` in the dataset format described above."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        for clip in clips:
            _write_record(fh, clip)


def _write_record(fh, clip: SyntheticClip) -> None:
    frames = np.asarray(clip.frames, dtype=np.float64)
    boxes = np.asarray(clip.boxes, dtype=np.float64)
    labels = np.asarray(clip.labels, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise FormatError(f"frames must be [T, H, W, 3], got {frames.shape}")
    t_dim, h, w, _ = frames.shape
    if boxes.ndim != 3 or boxes.shape[1] != t_dim or boxes.shape[2] != 4:
        raise FormatError(f"boxes must be [N_X, {t_dim}, 4], got {boxes.shape}")
    n_actors = boxes.shape[0]
    if labels.shape[:2] != (n_actors, t_dim) or labels.ndim != 3:
        raise FormatError(f"labels must be [{n_actors}, {t_dim}, N_c], got {labels.shape}")
    n_classes = labels.shape[2]

    fh.write(_RECORD_HEADER.pack(t_dim, h, w, n_actors, n_classes))
    quantized = np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)
    fh.write(quantized.tobytes(order="C"))
    fh.write(boxes.astype("<f4").tobytes(order="C"))
    bits = (labels > 0.5).astype(np.uint8)
    fh.write(np.packbits(bits, axis=-1, bitorder="little").tobytes(order="C"))


def read_dataset(path) -> list:
    """Read every clip record from ``path``.

    Frames come back as the quantized values over 255, so writing a
    read-back clip again is an exact fixed point.
    """
    clips = []
    with open(path, "rb") as fh:
        _check_header(fh, DATASET_MAGIC, DATASET_VERSION, "dataset")
        while True:
            head = fh.read(_RECORD_HEADER.size)
            if not head:
                break
            if len(head) != _RECORD_HEADER.size:
                raise FormatError("truncated file: partial record header")
            t_dim, h, w, n_actors, n_classes = _RECORD_HEADER.unpack(head)
            frame_bytes = _read_exact(fh, t_dim * h * w * 3, "frames")
            frames = np.frombuffer(frame_bytes, dtype=np.uint8).reshape(
                t_dim, h, w, 3).astype(np.float64) / 255.0
            box_bytes = _read_exact(fh, n_actors * t_dim * 4 * 4, "tubes")
            boxes = np.frombuffer(box_bytes, dtype="<f4").reshape(
                n_actors, t_dim, 4).astype(np.float64)
            row = (n_classes + 7) // 8
            bitmap = _read_exact(fh, n_actors * t_dim * row, "label bitmaps")
            packed = np.frombuffer(bitmap, dtype=np.uint8).reshape(n_actors, t_dim, row)
            labels = np.unpackbits(packed, axis=-1, count=n_classes,
                                   bitorder="little").astype(np.float64)
            clips.append(SyntheticClip(frames=frames, boxes=boxes, labels=labels,
                                       scenario={}))
    return clips


def save_checkpoint(path, params: dict, step: int, config: dict) -> None:
    """Serialize named arrays plus run metadata.

    ``params`` maps name to a numpy array or anything exposing
    ``.data`` as one (the tensor engine's Tensor qualifies). Buffers
    are stored f32 little-endian in sorted-name order so equal inputs
    give byte-identical files.
    """
    arrays = {}
    for name in sorted(params):
        value = params[name]
        arrays[name] = np.asarray(getattr(value, "data", value), dtype=np.float64)
    header = {
        "step": int(step),
        "config": config,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in arrays:
            fh.write(arrays[name].astype("<f4").tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint back as ``(arrays, step, config)``.

    Arrays are f64 copies of the stored f32 buffers, keyed by name.
    """
    with open(path, "rb") as fh:
        _check_header(fh, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
        (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"checkpoint header is not valid JSON: {exc}") from exc
        for key in ("step", "config", "tensors"):
            if key not in header:
                raise FormatError(f"checkpoint header missing '{key}'")
        arrays = {}
        for entry in header["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = _read_exact(fh, count * 4, f"tensor '{name}'")
            arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise FormatError("checkpoint has trailing bytes after the last tensor")
    return arrays, header["step"], header["config"]
