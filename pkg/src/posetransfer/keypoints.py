"""18-joint body keypoints in image-pixel coordinates.

Joint order follows the COCO-18 layout used by common bottom-up pose
estimators:

    ====  ===============
    idx   joint
    ====  ===============
    0     nose
    1     neck
    2     right_shoulder
    3     right_elbow
    4     right_wrist
    5     left_shoulder
    6     left_elbow
    7     left_wrist
    8     right_hip
    9     right_knee
    10    right_ankle
    11    left_hip
    12    left_knee
    13    left_ankle
    14    right_eye
    15    left_eye
    16    right_ear
    17    left_ear
    ====  ===============

Coordinates are pixel-center based: ``x`` is the column, ``y`` the row, and
pixel ``(i, j)`` has its center at ``x = j, y = i``. A joint with confidence
``<= 0`` is *missing*; its coordinates are carried but never used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import KeypointError

NUM_KEYPOINTS = 18

JOINT_NAMES = (
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
)


@dataclass(frozen=True)
class KeypointSet:
    """``points`` is an (18, 3) float array of ``(x, y, confidence)`` rows."""

    points: np.ndarray
    source_resolution: tuple[int, int]  # (H, W)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 3):
            raise KeypointError(f"expected {NUM_KEYPOINTS} (x, y, confidence) triples, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise KeypointError("keypoint values must be finite")
        h, w = (int(v) for v in self.source_resolution)
        if h <= 0 or w <= 0:
            raise KeypointError(f"source resolution must be positive, got {(h, w)}")
        conf = pts[:, 2]
        if np.any((conf < 0) | (conf > 1)):
            raise KeypointError("confidence must lie in [0, 1]")
        present = conf > 0
        xs, ys = pts[present, 0], pts[present, 1]
        if np.any((xs < 0) | (xs >= w) | (ys < 0) | (ys >= h)):
            bad = np.flatnonzero(present)[(xs < 0) | (xs >= w) | (ys < 0) | (ys >= h)]
            raise KeypointError(f"present keypoints {bad.tolist()} lie outside the {h}x{w} image")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_resolution", (h, w))

    @property
    def present(self) -> np.ndarray:
        return self.points[:, 2] > 0

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


def scale_keypoints(kp: KeypointSet, target: tuple[int, int]) -> KeypointSet:
    """Rescale coordinates from ``kp.source_resolution`` to ``target`` (H, W).

    Scaling is a plain per-axis ratio, so ``(512, 512)`` at 1024x1024 maps to
    ``(16, 16)`` at 32x32. Confidence is untouched.
    """
    th, tw = (int(v) for v in target)
    if th <= 0 or tw <= 0:
        raise KeypointError(f"target resolution must be positive, got {target}")
    sh, sw = kp.source_resolution
    pts = kp.points.copy()
    pts[:, 0] *= tw / sw
    pts[:, 1] *= th / sh
    # a float product can land exactly on the far border; keep it in range
    pts[:, 0] = np.minimum(pts[:, 0], np.nextafter(tw, 0))
    pts[:, 1] = np.minimum(pts[:, 1], np.nextafter(th, 0))
    return KeypointSet(pts, (th, tw))


def load_keypoints(path: str | Path, source_resolution: tuple[int, int]) -> KeypointSet:
    """Read a keypoint file: a JSON array of 18 ``[x, y, confidence]`` triples."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise KeypointError(f"keypoint file not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise KeypointError(f"malformed keypoint file {path}: {exc}") from None
    if not isinstance(data, list) or len(data) != NUM_KEYPOINTS:
        raise KeypointError(f"{path}: expected a list of {NUM_KEYPOINTS} triples")
    try:
        pts = np.array([[float(v) for v in row] for row in data], dtype=np.float64)
    except (TypeError, ValueError):
        raise KeypointError(f"{path}: every entry must be a numeric [x, y, confidence] triple") from None
    try:
        return KeypointSet(pts, source_resolution)
    except KeypointError as exc:
        raise KeypointError(f"{path}: {exc}") from None


def save_keypoints(kp: KeypointSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(kp.to_list()))
