"""Procedural stick-figure dataset for smoke tests and demos.

Every subject has a fixed palette and torso stripe pattern; every frame is
a random pose of that subject on a black background (as after background
removal). Keypoints are written in the 18-joint order of
:mod:`posetransfer.keypoints`.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .data import write_manifest
from .keypoints import KeypointSet, save_keypoints


def _pose(rng: np.random.Generator, size: int) -> np.ndarray:
    s = size / 256.0
    cx = 128 + rng.uniform(-12, 12)
    neck = np.array([cx, 72 + rng.uniform(-6, 6)])
    lean = rng.uniform(-0.15, 0.15)
    pts = np.zeros((18, 2))
    pts[1] = neck
    pts[0] = neck + [18 * math.sin(lean), -26]
    pts[2] = neck + [-30, 4]
    pts[5] = neck + [30, 4]
    mid_hip = neck + [70 * math.sin(lean), 78]
    pts[8] = mid_hip + [-18, 0]
    pts[11] = mid_hip + [18, 0]

    def limb(start, angle, length):
        return start + length * np.array([math.sin(angle), math.cos(angle)])

    # angles measured from straight down; positive swings to the figure's left (image right)
    pts[3] = limb(pts[2], rng.uniform(-2.4, 0.2), 34)
    pts[4] = limb(pts[3], rng.uniform(-2.6, 0.6), 30)
    pts[6] = limb(pts[5], rng.uniform(-0.2, 2.4), 34)
    pts[7] = limb(pts[6], rng.uniform(-0.6, 2.6), 30)
    pts[9] = limb(pts[8], rng.uniform(-0.6, 0.3), 40)
    pts[10] = limb(pts[9], rng.uniform(-0.4, 0.5), 38)
    pts[12] = limb(pts[11], rng.uniform(-0.3, 0.6), 40)
    pts[13] = limb(pts[12], rng.uniform(-0.5, 0.4), 38)
    head = pts[0]
    pts[14] = head + [-6, -5]
    pts[15] = head + [6, -5]
    pts[16] = head + [-12, -1]
    pts[17] = head + [12, -1]
    return np.clip(pts * s, 0, size - 1)


_LIMBS = ((2, 3), (3, 4), (5, 6), (6, 7), (8, 9), (9, 10), (11, 12), (12, 13))


def render_figure(points: np.ndarray, palette: np.ndarray, stripe: int, size: int) -> Image.Image:
    s = size / 256.0
    img = Image.new("RGB", (size, size), (0, 0, 0))
    draw = ImageDraw.Draw(img)
    torso = [tuple(points[i]) for i in (2, 5, 11, 8)]
    draw.polygon(torso, fill=tuple(palette[0]))
    # horizontal stripes clipped to the torso polygon
    mask = Image.new("L", (size, size), 0)
    ImageDraw.Draw(mask).polygon(torso, fill=255)
    stripes = Image.new("RGB", (size, size), tuple(palette[1]))
    stripe_mask = Image.new("L", (size, size), 0)
    sd = ImageDraw.Draw(stripe_mask)
    period = max(2, int(stripe * s))
    for y in range(0, size, 2 * period):
        sd.rectangle([0, y, size, y + period - 1], fill=255)
    img.paste(stripes, (0, 0), Image.fromarray(np.minimum(np.asarray(mask), np.asarray(stripe_mask))))
    width = max(2, int(round(12 * s)))
    for i, (a, b) in enumerate(_LIMBS):
        draw.line([tuple(points[a]), tuple(points[b])], fill=tuple(palette[2 + i % 4]), width=width)
        draw.ellipse(
            [points[b][0] - width / 2, points[b][1] - width / 2, points[b][0] + width / 2, points[b][1] + width / 2],
            fill=tuple(palette[2 + i % 4]),
        )
    r = 14 * s
    hx, hy = points[0]
    draw.ellipse([hx - r, hy - r, hx + r, hy + r], fill=tuple(palette[6]))
    draw.line([tuple(points[1]), tuple(points[0])], fill=tuple(palette[6]), width=width)
    return img


def make_dataset(
    root: str | Path,
    subjects: int = 2,
    frames: int = 3,
    size: int = 256,
    seed: int = 0,
    manifest_name: str = "manifest.jsonl",
) -> Path:
    """Write images, keypoint files and a manifest under ``root``; returns the manifest path."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    records = []
    for si in range(subjects):
        subject = f"subject{si:02d}"
        (root / subject).mkdir(parents=True, exist_ok=True)
        palette = rng.integers(60, 256, size=(7, 3))
        stripe = int(rng.integers(4, 10))
        for fi in range(frames):
            pts = _pose(rng, size)
            img = render_figure(pts, palette, stripe, size)
            frame = f"{fi:04d}"
            img.save(root / subject / f"{frame}.png")
            kp = KeypointSet(np.column_stack([pts, np.ones(18)]), (size, size))
            save_keypoints(kp, root / subject / f"{frame}.json")
            records.append(
                {
                    "subject_id": subject,
                    "frame_id": frame,
                    "image": f"{subject}/{frame}.png",
                    "keypoints": f"{subject}/{frame}.json",
                }
            )
    manifest = root / manifest_name
    write_manifest(records, manifest)
    return manifest
