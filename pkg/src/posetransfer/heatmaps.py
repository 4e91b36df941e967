"""Gaussian pose maps: one channel per joint, peak 1 at the joint location."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KeypointError, ShapeError
from .keypoints import NUM_KEYPOINTS, KeypointSet

DEFAULT_SIGMA = 3.2


@dataclass(frozen=True)
class HeatmapStack:
    maps: np.ndarray  # H x W x 18, float32
    sigma: float

    def __post_init__(self):
        if self.maps.ndim != 3 or self.maps.shape[2] != NUM_KEYPOINTS:
            raise ShapeError(f"heatmap stack must be H x W x {NUM_KEYPOINTS}, got {self.maps.shape}")

    @property
    def grid(self) -> tuple[int, int]:
        return self.maps.shape[0], self.maps.shape[1]

    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.maps.transpose(2, 0, 1))


def render_heatmaps(kp: KeypointSet, grid: tuple[int, int], sigma: float = DEFAULT_SIGMA) -> HeatmapStack:
    """Evaluate ``exp(-|p - u_k|^2 / (2 sigma^2))`` on every pixel center ``p``.

    ``sigma`` is in pixels of ``grid``. Missing joints give all-zero channels.
    The Gaussian is not truncated.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = (int(v) for v in grid)
    if kp.source_resolution != (h, w):
        raise KeypointError(
            f"keypoints are expressed at {kp.source_resolution}, not at the {h}x{w} grid; rescale them first"
        )
    ys = np.arange(h, dtype=np.float64)[:, None, None]
    xs = np.arange(w, dtype=np.float64)[None, :, None]
    ux, uy = kp.points[:, 0], kp.points[:, 1]
    d2 = (xs - ux) ** 2 + (ys - uy) ** 2
    maps = np.exp(-d2 / (2.0 * sigma * sigma))
    maps[:, :, ~kp.present] = 0.0
    return HeatmapStack(maps.astype(np.float32), float(sigma))


def heatmap_argmax(stack: HeatmapStack) -> KeypointSet:
    """Per-channel argmax; an all-zero channel yields a missing joint."""
    h, w = stack.grid
    flat = stack.maps.reshape(h * w, NUM_KEYPOINTS)
    idx = flat.argmax(axis=0)
    peak = flat[idx, np.arange(NUM_KEYPOINTS)]
    pts = np.zeros((NUM_KEYPOINTS, 3))
    pts[:, 0] = idx % w
    pts[:, 1] = idx // w
    pts[:, 2] = np.where(peak > 0, 1.0, 0.0)
    pts[peak <= 0, :2] = 0.0
    return KeypointSet(pts, (h, w))
