"""Dataset ingestion: manifests, image codecs and (reference, target) pairing.

Manifest format (JSON lines, paths relative to the manifest's directory)::

    {"subject_id": "s01", "frame_id": "0003", "image": "s01/0003.png", "keypoints": "s01/0003.json"}

Images are 8-bit RGB PNGs. Pixel values are mapped affinely from ``[0, 255]``
to ``[-1, 1]`` (``v / 127.5 - 1``), which :func:`encode_image` inverts exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageDecodeError, LevelError, ManifestError, ShapeError
from .keypoints import KeypointSet, load_keypoints, scale_keypoints

LEVELS = (64, 128, 256, 512, 1024)

# 8-bit modes PIL can widen to RGB without losing information.
_SUPPORTED_MODES = {"RGB", "RGBA", "L", "LA", "P", "1"}


def check_level(level: int) -> int:
    if level not in LEVELS:
        raise LevelError(f"invalid resolution level {level!r}; expected one of {LEVELS}")
    return int(level)


@dataclass(frozen=True)
class ImageBuffer:
    """An H x W x 3 float32 image with values in [-1, 1].

    Square side lengths from the resolution ladder are enforced where images
    enter the system (:func:`decode_image`); crops reuse this type at smaller
    sizes.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"image buffer must be H x W x 3, got {px.shape}")
        if px.shape[0] != px.shape[1]:
            raise ShapeError(f"image buffer must be square, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)) or px.min(initial=0) < -1 or px.max(initial=0) > 1:
            raise ShapeError("image values must be finite and within [-1, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


def to_unit_range(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)


def decode_image(path: str | Path, level: int) -> ImageBuffer:
    """Decode a PNG into a ``level x level`` buffer in [-1, 1].

    Non-matching sizes are resampled with PIL's bilinear filter, which
    widens its support when reducing (antialiased).
    """
    level = check_level(level)
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in _SUPPORTED_MODES:
                raise ImageDecodeError(f"{path}: unsupported pixel mode {im.mode!r} (8-bit RGB expected)")
            rgb = im.convert("RGB")
    except FileNotFoundError:
        raise ImageDecodeError(f"image not found: {path}") from None
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from None
    if rgb.size != (level, level):
        rgb = rgb.resize((level, level), Image.Resampling.BILINEAR)
    return ImageBuffer(to_unit_range(np.asarray(rgb)))


def encode_image(img: ImageBuffer | np.ndarray) -> np.ndarray:
    """Inverse range map to uint8 (round half up)."""
    px = img.pixels if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float32)
    return np.clip(np.floor((px + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def save_image(img: ImageBuffer | np.ndarray, path: str | Path) -> None:
    Image.fromarray(encode_image(img), mode="RGB").save(path)


def image_size(path: str | Path) -> tuple[int, int]:
    """(H, W) of an image file, read from its header only."""
    try:
        with Image.open(path) as im:
            w, h = im.size
    except FileNotFoundError:
        raise ImageDecodeError(f"image not found: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"{path}: cannot read image header ({exc})") from None
    return h, w


@dataclass(frozen=True)
class FrameRecord:
    subject_id: str
    frame_id: str
    image_path: Path
    keypoint_path: Path


@dataclass(frozen=True)
class PairingPolicy:
    """How (reference, target) pairs are drawn from a subject's frames.

    ``ordered``: every ordered pair of distinct frames of one subject.
    ``with_identity``: as ``ordered`` plus the (frame, frame) pairs.
    Each seed fixes a permutation of the pair list; an epoch visits each
    pair exactly once.
    """

    kind: str = "ordered"

    def __post_init__(self):
        if self.kind not in ("ordered", "with_identity"):
            raise ManifestError(f"unknown pairing policy {self.kind!r}")


@dataclass
class DatasetManifest:
    records: list[FrameRecord]
    pairing_policy: PairingPolicy = field(default_factory=PairingPolicy)
    root: Path = Path(".")

    def __post_init__(self):
        self._pairs = None

    @property
    def subjects(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, rec in enumerate(self.records):
            out.setdefault(rec.subject_id, []).append(i)
        return out

    def pairs(self) -> list[tuple[int, int]]:
        """All admissible (reference, target) record-index pairs, in a fixed order."""
        if self._pairs is None:
            pairs = []
            for subject in sorted(self.subjects):
                idx = self.subjects[subject]
                pairs.extend(itertools.permutations(idx, 2))
                if self.pairing_policy.kind == "with_identity":
                    pairs.extend((i, i) for i in idx)
            self._pairs = sorted(pairs)
        return self._pairs

    @property
    def epoch_size(self) -> int:
        return len(self.pairs())


_REQUIRED_FIELDS = ("subject_id", "frame_id", "image", "keypoints")


def load_manifest(path: str | Path, pairing_policy: PairingPolicy | None = None) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    root = path.parent
    records: list[FrameRecord] = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{lineno}: record must be a JSON object")
        missing = [k for k in _REQUIRED_FIELDS if not isinstance(obj.get(k), str) or not obj.get(k)]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing or non-string field(s) {missing}")
        key = (obj["subject_id"], obj["frame_id"])
        if key in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate frame {key}")
        seen.add(key)
        image_path = root / obj["image"]
        keypoint_path = root / obj["keypoints"]
        for p in (image_path, keypoint_path):
            if not p.is_file():
                raise ManifestError(f"{path}:{lineno}: referenced file does not exist: {p}")
        records.append(FrameRecord(obj["subject_id"], obj["frame_id"], image_path, keypoint_path))
    if not records:
        raise ManifestError(f"{path}: manifest has no records")
    manifest = DatasetManifest(records, pairing_policy or PairingPolicy(), root)
    for subject, idx in sorted(manifest.subjects.items()):
        if len(idx) < 2:
            raise ManifestError(f"{path}: subject {subject!r} has a single frame; at least 2 are needed to form a pair")
    return manifest


def write_manifest(records: list[dict], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in records))


@dataclass(frozen=True)
class SamplePair:
    reference: ImageBuffer
    target: ImageBuffer
    target_keypoints: KeypointSet
    subject_id: str
    reference_frame: str = ""
    target_frame: str = ""


def pair_records(manifest: DatasetManifest, seed: int, index: int) -> tuple[FrameRecord, FrameRecord]:
    """The (reference, target) records at ``index`` of the epoch permuted by ``seed``."""
    pairs = manifest.pairs()
    if not 0 <= index < len(pairs):
        raise IndexError(f"pair index {index} outside epoch range [0, {len(pairs)})")
    order = np.random.default_rng(seed).permutation(len(pairs))
    ref, tgt = pairs[order[index]]
    return manifest.records[ref], manifest.records[tgt]


def load_frame(record: FrameRecord, level: int) -> tuple[ImageBuffer, KeypointSet]:
    """Decode a frame at ``level`` with keypoints rescaled to the same grid."""
    img = decode_image(record.image_path, level)
    kp = load_keypoints(record.keypoint_path, image_size(record.image_path))
    return img, scale_keypoints(kp, (level, level))


def sample_pair(manifest: DatasetManifest, seed: int, index: int, level: int = 64) -> SamplePair:
    ref_rec, tgt_rec = pair_records(manifest, seed, index)
    reference, _ = load_frame(ref_rec, level)
    target, target_kp = load_frame(tgt_rec, level)
    return SamplePair(reference, target, target_kp, tgt_rec.subject_id, ref_rec.frame_id, tgt_rec.frame_id)
