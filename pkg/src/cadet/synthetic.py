"""Synthetic clip generator for desk-scale training and evaluation.

Each clip holds one or two moving actor rectangles drawn on channel 0.
The action class of an actor is encoded by a small cue patch placed
OUTSIDE the actor's box (riding along with it at a fixed offset), with
a channel-1/channel-2 intensity mix that identifies the class. The
point of the design: a detector whose classification attends only
inside actor boxes cannot separate the classes, while per-class
attention that can look next to the actor can. A faint positional
luminance ramp gives convolutional features a notion of absolute
position, and a few static gray distractor patches add clutter with no
label information.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .matching import GroundTruth

__all__ = ["TaskConfig", "SyntheticClip", "generate_clip", "make_dataset",
           "to_ground_truth"]

# candidate directions for the cue patch, (dy, dx) unit steps
_DIRECTIONS = [(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)]


@dataclass
class TaskConfig:
    n_classes: int = 2
    frame_h: int = 32
    frame_w: int = 32
    n_frames: int = 4
    min_actors: int = 1
    max_actors: int = 2
    actor_min_frac: float = 0.22
    actor_max_frac: float = 0.38
    cue_size: int = 4
    cue_gap: int = 2
    n_distractors: int = 2
    same_action: bool = False
    ramp_strength: float = 0.08

    def validate(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if not 1 <= self.min_actors <= self.max_actors:
            raise ValueError("need 1 <= min_actors <= max_actors")
        if self.frame_h < 16 or self.frame_w < 16:
            raise ValueError("frames smaller than 16x16 leave no room for cues")
        return self


@dataclass
class SyntheticClip:
    """frames [T, H, W, 3] in [0, 1]; boxes [N_X, T, 4] normalized
    (cx, cy, w, h); labels [N_X, T, N_c] binary."""

    frames: np.ndarray
    boxes: np.ndarray
    labels: np.ndarray
    scenario: dict = field(default_factory=dict)

    @property
    def n_actors(self) -> int:
        return self.boxes.shape[0]


def class_cue_color(c: int, n_classes: int) -> tuple:
    """Channel-1/channel-2 intensities identifying class c.

    Classes spread over a quarter turn, so the two ends are pure
    channel-1 and pure channel-2 and any two classes differ in the mix.
    """
    theta = 0.0 if n_classes == 1 else (np.pi / 2) * c / (n_classes - 1)
    return 0.9 * float(np.cos(theta) ** 2), 0.9 * float(np.sin(theta) ** 2)


def _boxes_intersect(a, b) -> bool:
    ay0, ax0, ay1, ax1 = a
    by0, bx0, by1, bx1 = b
    return not (ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0)


def _cue_rect(box, direction, gap: int, size: int):
    """Pixel rect of the cue patch next to ``box`` (y0, x0, y1, x1)."""
    y0, x0, y1, x1 = box
    dy, dx = direction
    if dx > 0:
        cx0 = x1 + gap
    elif dx < 0:
        cx0 = x0 - gap - size
    else:
        cx0 = (x0 + x1 - size) // 2
    if dy > 0:
        cy0 = y1 + gap
    elif dy < 0:
        cy0 = y0 - gap - size
    else:
        cy0 = (y0 + y1 - size) // 2
    return (cy0, cx0, cy0 + size, cx0 + size)


def _actor_track(cfg: TaskConfig, rng: np.random.Generator):
    """One actor's pixel boxes over time plus a valid cue direction.

    Rejection-samples the placement until the cue patch fits inside the
    frame and never touches the actor box at any frame.
    """
    h, w, t_dim = cfg.frame_h, cfg.frame_w, cfg.n_frames
    for _ in range(200):
        bw = max(4, int(round(rng.uniform(cfg.actor_min_frac, cfg.actor_max_frac) * w)))
        bh = max(4, int(round(rng.uniform(cfg.actor_min_frac, cfg.actor_max_frac) * h)))
        vy, vx = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
        y_start = int(rng.integers(0, h - bh + 1))
        x_start = int(rng.integers(0, w - bw + 1))
        boxes = []
        for t in range(t_dim):
            y0 = int(np.clip(y_start + vy * t, 0, h - bh))
            x0 = int(np.clip(x_start + vx * t, 0, w - bw))
            boxes.append((y0, x0, y0 + bh, x0 + bw))
        for pick in rng.permutation(len(_DIRECTIONS)):
            direction = _DIRECTIONS[int(pick)]
            cues = [_cue_rect(b, direction, cfg.cue_gap, cfg.cue_size) for b in boxes]
            ok = True
            for cue, box in zip(cues, boxes):
                cy0, cx0, cy1, cx1 = cue
                if (cy0 < 0 or cx0 < 0 or cy1 > h or cx1 > w
                        or _boxes_intersect(cue, box)):
                    ok = False
                    break
            if ok:
                return boxes, cues, direction, (vy, vx)
    raise RuntimeError("could not place an actor with an exterior cue")


def generate_clip(cfg: TaskConfig, rng: np.random.Generator) -> SyntheticClip:
    cfg.validate()
    h, w, t_dim = cfg.frame_h, cfg.frame_w, cfg.n_frames
    n_actors = int(rng.integers(cfg.min_actors, cfg.max_actors + 1))

    tracks = []
    for _ in range(n_actors):
        for _ in range(100):
            candidate = _actor_track(cfg, rng)
            # actors and cues all stay pairwise disjoint, so every cue
            # unambiguously belongs to exactly one actor
            mine = [candidate[0][t] for t in range(t_dim)]
            mine += [candidate[1][t] for t in range(t_dim)]
            clash = False
            for other in tracks:
                theirs = [other[0][t] for t in range(t_dim)]
                theirs += [other[1][t] for t in range(t_dim)]
                if any(_boxes_intersect(a, b) for a in mine for b in theirs):
                    clash = True
                    break
            if not clash:
                tracks.append(candidate)
                break
        else:
            raise RuntimeError("could not place non-overlapping actors")

    if cfg.same_action:
        shared = int(rng.integers(0, cfg.n_classes))
        classes = [shared] * n_actors
    else:
        classes = [int(rng.integers(0, cfg.n_classes)) for _ in range(n_actors)]

    frames = np.zeros((t_dim, h, w, 3))
    ys = (np.arange(h) / max(h - 1, 1))[None, :, None, None]
    xs = (np.arange(w) / max(w - 1, 1))[None, None, :, None]
    frames += cfg.ramp_strength * 0.5 * (ys + xs)

    distractors = []
    for _ in range(cfg.n_distractors):
        size = int(rng.integers(3, 6))
        dy = int(rng.integers(0, h - size + 1))
        dx = int(rng.integers(0, w - size + 1))
        distractors.append((dy, dx, size))
        frames[:, dy : dy + size, dx : dx + size, :] = np.maximum(
            frames[:, dy : dy + size, dx : dx + size, :], 0.25
        )

    gt_boxes = np.zeros((n_actors, t_dim, 4))
    labels = np.zeros((n_actors, t_dim, cfg.n_classes))
    for i, (boxes, cues, direction, velocity) in enumerate(tracks):
        ch1, ch2 = class_cue_color(classes[i], cfg.n_classes)
        labels[i, :, classes[i]] = 1.0
        for t, ((y0, x0, y1, x1), (cy0, cx0, cy1, cx1)) in enumerate(zip(boxes, cues)):
            frames[t, y0:y1, x0:x1, 0] = np.maximum(frames[t, y0:y1, x0:x1, 0], 0.85)
            frames[t, cy0:cy1, cx0:cx1, 1] = np.maximum(frames[t, cy0:cy1, cx0:cx1, 1], ch1)
            frames[t, cy0:cy1, cx0:cx1, 2] = np.maximum(frames[t, cy0:cy1, cx0:cx1, 2], ch2)
            gt_boxes[i, t] = (
                (x0 + x1) / 2.0 / w,
                (y0 + y1) / 2.0 / h,
                (x1 - x0) / w,
                (y1 - y0) / h,
            )

    np.clip(frames, 0.0, 1.0, out=frames)
    scenario = {
        "n_actors": n_actors,
        "classes": classes,
        "cue_directions": [tr[2] for tr in tracks],
        "velocities": [tr[3] for tr in tracks],
        "distractors": distractors,
        "same_action": cfg.same_action,
    }
    return SyntheticClip(frames=frames, boxes=gt_boxes, labels=labels,
                         scenario=scenario)


def make_dataset(cfg: TaskConfig, n_clips: int, seed: int,
                 threads: int = 1) -> list:
    """Deterministic clip list; identical for any worker count.

    Each clip draws from its own spawned seed sequence, so splitting the
    work across threads cannot reorder or couple the random streams.
    """
    seeds = np.random.SeedSequence(seed).spawn(n_clips)

    def build(idx: int) -> SyntheticClip:
        return generate_clip(cfg, np.random.default_rng(seeds[idx]))

    if threads <= 1:
        return [build(i) for i in range(n_clips)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(build, range(n_clips)))


def to_ground_truth(clip: SyntheticClip, n_actors: int) -> GroundTruth:
    """Pad a clip's annotations to the model's actor budget."""
    n_x, t_dim = clip.boxes.shape[:2]
    n_c = clip.labels.shape[-1]
    if n_x > n_actors:
        raise ValueError(f"clip has {n_x} actors, budget is {n_actors}")
    boxes = np.zeros((n_actors, t_dim, 4))
    labels = np.zeros((n_actors, t_dim, n_c))
    boxes[:n_x] = clip.boxes
    labels[:n_x] = clip.labels
    return GroundTruth(boxes, labels, n_x)
