"""Keypoint-anchored square regions ("local descriptors") and their crops.

At level ``L`` every window is ``L // 8`` pixels on a side. The first 18
centers are the raw joints; denser layouts add points interpolated along a
fixed table of 13 limb and torso segments. Face joints are never used as
segment anchors.

The default layout:

* 31 descriptors: the 18 joints plus the midpoint (``t = 0.5``) of each segment.
* 44 descriptors: the 31 above plus the proximal quarter point
  (``t = 0.25`` from the first, torso-side anchor) of each segment.

Each denser layout is a superset of the previous one, so the union of
windows can only grow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import ImageBuffer, check_level
from .errors import LevelError, ShapeError
from .keypoints import NUM_KEYPOINTS, KeypointSet

# Segment anchors are joint indices or "midhip" (mean of both hips).
DEFAULT_SEGMENTS: tuple[tuple[int | str, int | str], ...] = (
    (2, 3),  # right upper arm
    (3, 4),  # right forearm
    (5, 6),  # left upper arm
    (6, 7),  # left forearm
    (8, 9),  # right thigh
    (9, 10),  # right shin
    (11, 12),  # left thigh
    (12, 13),  # left shin
    (2, 5),  # shoulder line
    (8, 11),  # hip line
    (1, 8),  # neck to right hip
    (1, 11),  # neck to left hip
    (1, "midhip"),  # spine
)

DEFAULT_SCHEDULE = {64: 18, 128: 18, 256: 31, 512: 31, 1024: 44}


@dataclass(frozen=True)
class DescriptorLayout:
    """Segment table plus the interpolation fractions each density adds.

    ``stages`` maps a descriptor count to the fractions added on top of the
    next-smaller count. Counts must be ``18 + k * len(segments)``.
    """

    segments: tuple = DEFAULT_SEGMENTS
    stages: dict = field(default_factory=lambda: {31: (0.5,), 44: (0.25,)})
    schedule: dict = field(default_factory=lambda: dict(DEFAULT_SCHEDULE))

    def __post_init__(self):
        count = NUM_KEYPOINTS
        for n in sorted(self.stages):
            count += len(self.stages[n]) * len(self.segments)
            if count != n:
                raise ValueError(f"descriptor stage {n} yields {count} centers with {len(self.segments)} segments")
        for level, n in self.schedule.items():
            if n != NUM_KEYPOINTS and n not in self.stages:
                raise ValueError(f"schedule entry {level}: {n} is not a configured descriptor count")

    @property
    def counts(self) -> tuple[int, ...]:
        return (NUM_KEYPOINTS, *sorted(self.stages))

    def parameters(self, count: int) -> list[tuple[int, float]]:
        """(segment index, t) for every interpolated center of a layout of ``count``."""
        if count not in self.counts:
            raise ValueError(f"unsupported descriptor count {count}; choose from {self.counts}")
        out = []
        for n in sorted(self.stages):
            if n > count:
                break
            for t in self.stages[n]:
                out.extend((s, float(t)) for s in range(len(self.segments)))
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "DescriptorLayout":
        segments = tuple(tuple(seg) for seg in cfg.get("segments", DEFAULT_SEGMENTS))
        stages = {int(k): tuple(float(t) for t in v) for k, v in cfg.get("stages", {31: [0.5], 44: [0.25]}).items()}
        schedule = {int(k): int(v) for k, v in cfg.get("schedule", DEFAULT_SCHEDULE).items()}
        return cls(segments, stages, schedule)

    def to_dict(self) -> dict:
        return {
            "segments": [list(s) for s in self.segments],
            "stages": {k: list(v) for k, v in self.stages.items()},
            "schedule": dict(self.schedule),
        }


DEFAULT_LAYOUT = DescriptorLayout()


@dataclass(frozen=True)
class Rect:
    """Half-open square ``[x0, x0 + side) x [y0, y0 + side)``."""

    x0: int
    y0: int
    side: int

    @property
    def center(self) -> tuple[int, int]:
        return self.x0 + self.side // 2, self.y0 + self.side // 2

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.side), slice(self.x0, self.x0 + self.side)


@dataclass(frozen=True)
class DescriptorSet:
    centers: np.ndarray  # N x 2, (x, y) pixels
    window_side: int
    level: int
    sources: tuple = ()  # per center: joint index, or (segment index, t)

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def rects(self) -> list[Rect]:
        return [crop_window(c, self.level, self.window_side) for c in self.centers]


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def crop_window(center, level: int, side: int | None = None) -> Rect:
    """Square of side ``level // 8`` around ``center``, translated to fit.

    The origin is ``round(center) - side // 2`` (round half up), then clamped
    to ``[0, level - side]``. ``side`` may be overridden for toy geometries.
    """
    if side is None:
        side = level // 8
    if not 0 < side <= level:
        raise ValueError(f"window side {side} does not fit a {level}-pixel image")
    hi = level - side
    x0 = min(max(_round_half_up(center[0]) - side // 2, 0), hi)
    y0 = min(max(_round_half_up(center[1]) - side // 2, 0), hi)
    return Rect(x0, y0, side)


def _anchor(xy: np.ndarray, present: np.ndarray, a) -> tuple[np.ndarray, bool]:
    if a == "midhip":
        return (xy[8] + xy[11]) / 2.0, bool(present[8] and present[11])
    return xy[a], bool(present[a])


def build_descriptors(
    kp: KeypointSet,
    level: int,
    layout: DescriptorLayout = DEFAULT_LAYOUT,
    count: int | None = None,
) -> DescriptorSet:
    """Descriptor centers for ``kp`` (already expressed at ``level``).

    ``count`` defaults to ``layout.schedule[level]``. Descriptors touching a
    missing joint are dropped, so ``len(result)`` can be below ``count``.
    """
    level = check_level(level)
    if kp.source_resolution != (level, level):
        raise LevelError(f"keypoints are at {kp.source_resolution}, expected {level}x{level}")
    if count is None:
        count = layout.schedule[level]
    xy, present = kp.xy, kp.present
    centers, sources = [], []
    for j in range(NUM_KEYPOINTS):
        if present[j]:
            centers.append(xy[j])
            sources.append(j)
    for s, t in layout.parameters(count):
        a, b = layout.segments[s]
        pa, ok_a = _anchor(xy, present, a)
        pb, ok_b = _anchor(xy, present, b)
        if ok_a and ok_b:
            centers.append(pa + t * (pb - pa))
            sources.append((s, t))
    arr = np.array(centers, dtype=np.float64).reshape(-1, 2)
    return DescriptorSet(arr, level // 8, level, tuple(sources))


def extract_crops(img: ImageBuffer, ds: DescriptorSet) -> list[ImageBuffer]:
    if img.resolution != (ds.level, ds.level):
        raise ShapeError(f"image is {img.resolution}, descriptors were built at level {ds.level}")
    crops = []
    for rect in ds.rects:
        ys, xs = rect.slices()
        crops.append(ImageBuffer(img.pixels[ys, xs].copy()))
    return crops


def crop_tensor(images: torch.Tensor, rects_per_sample: list[list[Rect]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched crop of an ``(B, C, H, W)`` tensor.

    Returns ``(crops, owner)`` where ``crops`` is ``(sum N_b, C, s, s)`` and
    ``owner[i]`` is the batch index crop ``i`` came from. Gradients flow to
    ``images``. All rects must share one side length.
    """
    pieces, owner = [], []
    side = None
    for b, rects in enumerate(rects_per_sample):
        for r in rects:
            if side is None:
                side = r.side
            elif r.side != side:
                raise ShapeError("all crop windows in a batch must share one side length")
            ys, xs = r.slices()
            pieces.append(images[b, :, ys, xs])
            owner.append(b)
    if not pieces:
        raise ShapeError("no descriptor windows to crop")
    return torch.stack(pieces), torch.tensor(owner, dtype=torch.long, device=images.device)
